#pragma once

#include <cstdint>
#include <vector>

namespace lfd {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Reserved ids shared by every vocabulary.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEosToken = 2;
inline constexpr TokenId kUnkToken = 3;
inline constexpr TokenId kNumSpecialTokens = 4;

}  // namespace lfd
