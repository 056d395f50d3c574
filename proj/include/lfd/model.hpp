#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lfd/json_util.hpp"
#include "lfd/tensor.hpp"
#include "lfd/tokens.hpp"

namespace lfd {
class Rng;
}

namespace lfd::model {

enum class Architecture { decoder_only, encoder_decoder };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

struct ModelConfig {
    Architecture arch = Architecture::decoder_only;
    int layers = 6;
    int model_dim = 64;
    int heads = 4;
    int ffn_dim = 256;
    int vocab_size = 0;
    int max_positions = 160;
    double dropout = 0.1;
    double init_std = 0.02;
    std::uint64_t seed = 0;

    /// Throws InvalidConfig naming the offending field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j, const std::string& context = "model");

/// Named model weights in a stable insertion order.
class ParameterSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor value);
    bool contains(std::string_view name) const;
    const Tensor& at(std::string_view name) const;

    std::span<const Entry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const;

    /// Detaches every tensor from differentiation. A frozen set never
    /// receives gradients and optimizers refuse to update it.
    void freeze();
    bool frozen() const noexcept { return frozen_; }

    /// Deep copy; the copy is trainable regardless of this set's state.
    ParameterSet clone_trainable() const;

    void zero_grad();

    /// FNV-1a over names, shapes and the raw value bytes.
    std::uint64_t checksum() const;

    bool bitwise_equal(const ParameterSet& other) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    bool frozen_ = false;
};

/// Per-position log-probabilities over the vocabulary.
class LogProbMatrix {
public:
    LogProbMatrix() = default;
    explicit LogProbMatrix(Tensor values);

    const Tensor& tensor() const noexcept { return values_; }
    std::size_t rows() const { return values_.rows(); }
    std::size_t vocab() const { return values_.cols(); }
    std::span<const double> row(std::size_t t) const { return values_.values().subspan(t * vocab(), vocab()); }
    double at(std::size_t t, std::size_t v) const { return values_.at(t, v); }

private:
    Tensor values_;
};

ParameterSet init_parameters(const ModelConfig& cfg);

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout > 0
};

/// Runs the network on condition `x` and decoder tokens `y_prefix`.
///
/// Returns |y_prefix| + 1 rows: row 0 is the distribution of the first target
/// token given x, row t + 1 the distribution after consuming y_prefix[0..t].
/// Decoder-only models read [BOS] x y_prefix as one causal sequence; the
/// encoder-decoder encodes x + [EOS] and decodes [BOS] y_prefix.
LogProbMatrix forward(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                      std::span<const TokenId> y_prefix, const ForwardOptions& options = {});

/// Teacher-forced scoring: |y| rows, row t = log p(. | y_<t, x).
LogProbMatrix score(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                    std::span<const TokenId> y, const ForwardOptions& options = {});

/// Log-probabilities of the next token after `generated`.
std::vector<double> next_token_logprobs(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                                        std::span<const TokenId> generated);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: one line "lfd-checkpoint <version> <header bytes>\n", then a JSON
// manifest of exactly that many bytes (model config, frozen flag, and for each
// tensor its name, shape, byte offset and element count), then the tensors as
// raw little-endian IEEE-754 doubles.

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ParameterSet params;
};

std::string serialize_checkpoint(const ModelConfig& cfg, const ParameterSet& params);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lfd::model
