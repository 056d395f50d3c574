#include "lfd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lfd/error.hpp"
#include "lfd/rng.hpp"

namespace lfd::model {

std::string to_string(Architecture arch) {
    return arch == Architecture::decoder_only ? "decoder_only" : "encoder_decoder";
}

Architecture architecture_from_string(const std::string& name) {
    if (name == "decoder_only") return Architecture::decoder_only;
    if (name == "encoder_decoder") return Architecture::encoder_decoder;
    throw Error(ErrorKind::InvalidConfig, "model.arch: unknown architecture '" + name + "'");
}

void ModelConfig::validate() const {
    require(layers >= 1, ErrorKind::InvalidConfig, "model.layers must be >= 1");
    require(model_dim >= 1, ErrorKind::InvalidConfig, "model.model_dim must be >= 1");
    require(heads >= 1 && model_dim % heads == 0, ErrorKind::InvalidConfig, "model.model_dim must be divisible by model.heads");
    require(ffn_dim >= 1, ErrorKind::InvalidConfig, "model.ffn_dim must be >= 1");
    require(vocab_size >= 2, ErrorKind::InvalidConfig, "model.vocab_size must be >= 2");
    require(max_positions >= 2, ErrorKind::InvalidConfig, "model.max_positions must be >= 2");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidConfig, "model.dropout must lie in [0, 1)");
    require(init_std > 0.0, ErrorKind::InvalidConfig, "model.init_std must be positive");
}

Json to_json(const ModelConfig& cfg) {
    return Json{{"arch", to_string(cfg.arch)},   {"layers", cfg.layers},         {"model_dim", cfg.model_dim},
                {"heads", cfg.heads},            {"ffn_dim", cfg.ffn_dim},       {"vocab_size", cfg.vocab_size},
                {"max_positions", cfg.max_positions}, {"dropout", cfg.dropout}, {"init_std", cfg.init_std},
                {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const Json& j, const std::string& context) {
    ModelConfig cfg;
    StrictObject obj(j, context);
    std::string arch = to_string(cfg.arch);
    obj.optional("arch", arch)
        .optional("layers", cfg.layers)
        .optional("model_dim", cfg.model_dim)
        .optional("heads", cfg.heads)
        .optional("ffn_dim", cfg.ffn_dim)
        .optional("vocab_size", cfg.vocab_size)
        .optional("max_positions", cfg.max_positions)
        .optional("dropout", cfg.dropout)
        .optional("init_std", cfg.init_std)
        .optional("seed", cfg.seed);
    obj.finish();
    cfg.arch = architecture_from_string(arch);
    return cfg;
}

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
    require(!contains(name), ErrorKind::ContractViolation, "duplicate parameter name " + name);
    if (frozen_) {
        value.set_requires_grad(false);
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

bool ParameterSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const Tensor& ParameterSet::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    require(it != index_.end(), ErrorKind::ContractViolation, "no parameter named " + std::string(name));
    return entries_[it->second].second;
}

std::size_t ParameterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

void ParameterSet::freeze() {
    frozen_ = true;
    for (auto& [name, t] : entries_) {
        t.set_requires_grad(false);
        t.zero_grad();
    }
}

ParameterSet ParameterSet::clone_trainable() const {
    ParameterSet copy;
    for (const auto& [name, t] : entries_) {
        Tensor c = t.clone();
        c.set_requires_grad(true);
        copy.add(name, std::move(c));
    }
    return copy;
}

void ParameterSet::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

namespace {

struct Fnv1a {
    std::uint64_t state = 0xcbf29ce484222325ULL;
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 0x100000001b3ULL;
        }
    }
};

}  // namespace

std::uint64_t ParameterSet::checksum() const {
    Fnv1a h;
    for (const auto& [name, t] : entries_) {
        h.bytes(name.data(), name.size());
        for (std::size_t extent : t.shape()) {
            const std::uint64_t e = extent;
            h.bytes(&e, sizeof e);
        }
        h.bytes(t.values().data(), t.size() * sizeof(double));
    }
    return h.state;
}

bool ParameterSet::bitwise_equal(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& [na, a] = entries_[i];
        const auto& [nb, b] = other.entries_[i];
        if (na != nb || a.shape() != b.shape()) return false;
        if (std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

LogProbMatrix::LogProbMatrix(Tensor values) : values_(std::move(values)) {
    require(values_.defined() && values_.rank() == 2, ErrorKind::ContractViolation, "LogProbMatrix needs a [rows x vocab] tensor");
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

std::string layer_name(const char* stack, int i) { return std::string(stack) + "." + std::to_string(i); }

class Initializer {
public:
    Initializer(const ModelConfig& cfg) : rng_(cfg.seed), std_(cfg.init_std) {}

    void normal(ParameterSet& ps, const std::string& name, Shape shape) {
        std::vector<double> v(shape_size(shape));
        for (double& x : v) x = std_ * rng_.normal();
        ps.add(name, Tensor(std::move(shape), std::move(v), true));
    }
    void constant(ParameterSet& ps, const std::string& name, Shape shape, double value) {
        const std::size_t n = shape_size(shape);
        ps.add(name, Tensor(std::move(shape), std::vector<double>(n, value), true));
    }
    void layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t d) {
        constant(ps, prefix + ".gain", {d}, 1.0);
        constant(ps, prefix + ".bias", {d}, 0.0);
    }
    void attention(ParameterSet& ps, const std::string& prefix, std::size_t d) {
        for (const char* p : {"q", "k", "v", "o"}) {
            normal(ps, prefix + ".w" + p, {d, d});
            constant(ps, prefix + ".b" + p, {d}, 0.0);
        }
    }
    void ffn(ParameterSet& ps, const std::string& prefix, std::size_t d, std::size_t f) {
        normal(ps, prefix + ".w1", {d, f});
        constant(ps, prefix + ".b1", {f}, 0.0);
        normal(ps, prefix + ".w2", {f, d});
        constant(ps, prefix + ".b2", {d}, 0.0);
    }

private:
    Rng rng_;
    double std_;
};

}  // namespace

ParameterSet init_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.model_dim);
    const auto f = static_cast<std::size_t>(cfg.ffn_dim);
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto p = static_cast<std::size_t>(cfg.max_positions);
    const bool seq2seq = cfg.arch == Architecture::encoder_decoder;

    ParameterSet ps;
    Initializer init(cfg);
    init.normal(ps, "tok_emb", {v, d});
    init.normal(ps, "pos_emb", {p, d});
    if (seq2seq) {
        init.normal(ps, "enc.pos_emb", {p, d});
        for (int i = 0; i < cfg.layers; ++i) {
            const std::string L = layer_name("enc", i);
            init.layer_norm(ps, L + ".ln1", d);
            init.attention(ps, L + ".self", d);
            init.layer_norm(ps, L + ".ln2", d);
            init.ffn(ps, L + ".ffn", d, f);
        }
        init.layer_norm(ps, "enc.ln_f", d);
    }
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string L = layer_name("dec", i);
        init.layer_norm(ps, L + ".ln1", d);
        init.attention(ps, L + ".self", d);
        if (seq2seq) {
            init.layer_norm(ps, L + ".ln_cross", d);
            init.attention(ps, L + ".cross", d);
        }
        init.layer_norm(ps, L + ".ln2", d);
        init.ffn(ps, L + ".ffn", d, f);
    }
    init.layer_norm(ps, "dec.ln_f", d);
    // Decoder-only models reuse tok_emb as the output projection.
    if (seq2seq) {
        init.normal(ps, "out.weight", {d, v});
    }
    init.constant(ps, "out.bias", {v}, 0.0);
    return ps;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

class Network {
public:
    Network(const ParameterSet& ps, const ModelConfig& cfg, const ForwardOptions& opt) : ps_(ps), cfg_(cfg), opt_(opt) {
        require(!opt.training || cfg.dropout == 0.0 || opt.rng != nullptr, ErrorKind::ContractViolation,
                "training forward with dropout needs an rng");
    }

    Tensor drop(const Tensor& t) const {
        if (!opt_.training || cfg_.dropout == 0.0) {
            return t;
        }
        return ops::dropout(t, cfg_.dropout, *opt_.rng);
    }

    Tensor linear(const Tensor& x, const std::string& w, const std::string& b) const {
        return ops::add_rowwise(ops::matmul(x, ps_.at(w)), ps_.at(b));
    }

    Tensor norm(const Tensor& x, const std::string& prefix) const {
        return ops::layer_norm_rows(x, ps_.at(prefix + ".gain"), ps_.at(prefix + ".bias"));
    }

    Tensor attention(const Tensor& query_in, const Tensor& kv_in, const std::string& prefix, bool causal) const {
        const Tensor q = linear(query_in, prefix + ".wq", prefix + ".bq");
        const Tensor k = linear(kv_in, prefix + ".wk", prefix + ".bk");
        const Tensor v = linear(kv_in, prefix + ".wv", prefix + ".bv");
        const auto heads = static_cast<std::size_t>(cfg_.heads);
        const std::size_t dh = static_cast<std::size_t>(cfg_.model_dim) / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const Tensor qh = ops::slice_cols(q, h * dh, dh);
            const Tensor kh = ops::slice_cols(k, h * dh, dh);
            const Tensor vh = ops::slice_cols(v, h * dh, dh);
            const Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
            const Tensor weights = drop(ops::softmax_rows(scores, causal));
            outs.push_back(ops::matmul(weights, vh));
        }
        const Tensor merged = heads == 1 ? outs[0] : ops::concat_cols(outs);
        return linear(merged, prefix + ".wo", prefix + ".bo");
    }

    Tensor feed_forward(const Tensor& x, const std::string& prefix) const {
        const Tensor hidden = ops::gelu(linear(x, prefix + ".w1", prefix + ".b1"));
        return linear(hidden, prefix + ".w2", prefix + ".b2");
    }

    Tensor embed(std::span<const TokenId> ids, const std::string& pos_table) const {
        std::vector<TokenId> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<TokenId>(i);
        return drop(ops::add(ops::embedding(ps_.at("tok_emb"), ids), ops::embedding(ps_.at(pos_table), positions)));
    }

    Tensor encode(std::span<const TokenId> ids) const {
        Tensor h = embed(ids, "enc.pos_emb");
        for (int i = 0; i < cfg_.layers; ++i) {
            const std::string L = layer_name("enc", i);
            const Tensor a = norm(h, L + ".ln1");
            h = ops::add(h, drop(attention(a, a, L + ".self", false)));
            h = ops::add(h, drop(feed_forward(norm(h, L + ".ln2"), L + ".ffn")));
        }
        return norm(h, "enc.ln_f");
    }

    Tensor decode(std::span<const TokenId> ids, const Tensor* memory) const {
        Tensor h = embed(ids, "pos_emb");
        for (int i = 0; i < cfg_.layers; ++i) {
            const std::string L = layer_name("dec", i);
            const Tensor a = norm(h, L + ".ln1");
            h = ops::add(h, drop(attention(a, a, L + ".self", true)));
            if (memory != nullptr) {
                h = ops::add(h, drop(attention(norm(h, L + ".ln_cross"), *memory, L + ".cross", false)));
            }
            h = ops::add(h, drop(feed_forward(norm(h, L + ".ln2"), L + ".ffn")));
        }
        return norm(h, "dec.ln_f");
    }

    Tensor project(const Tensor& h) const {
        const Tensor logits = cfg_.arch == Architecture::decoder_only
                                  ? ops::matmul(h, ops::transpose(ps_.at("tok_emb")))
                                  : ops::matmul(h, ps_.at("out.weight"));
        return ops::log_softmax_rows(ops::add_rowwise(logits, ps_.at("out.bias")));
    }

private:
    const ParameterSet& ps_;
    const ModelConfig& cfg_;
    const ForwardOptions& opt_;
};

void check_tokens(std::span<const TokenId> tokens, int vocab, const char* what) {
    for (TokenId t : tokens) {
        require(t >= 0 && t < vocab, ErrorKind::InvalidToken,
                std::string(what) + " token " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
}

}  // namespace

namespace {

// Projects every decoder row, or only the final one when `last_only`.
LogProbMatrix run_forward(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                          std::span<const TokenId> y_prefix, const ForwardOptions& options, bool last_only) {
    check_tokens(x, cfg.vocab_size, "condition");
    check_tokens(y_prefix, cfg.vocab_size, "target");
    const auto max_pos = static_cast<std::size_t>(cfg.max_positions);
    Network net(params, cfg, options);

    if (cfg.arch == Architecture::decoder_only) {
        const std::size_t length = 1 + x.size() + y_prefix.size();
        require(length <= max_pos, ErrorKind::LengthExceeded,
                "sequence of " + std::to_string(length) + " positions exceeds max_positions " + std::to_string(max_pos));
        TokenSequence ids;
        ids.reserve(length);
        ids.push_back(kBosToken);
        ids.insert(ids.end(), x.begin(), x.end());
        ids.insert(ids.end(), y_prefix.begin(), y_prefix.end());
        const Tensor hidden = net.decode(ids, nullptr);
        if (last_only) return LogProbMatrix(net.project(ops::slice_rows(hidden, length - 1, 1)));
        return LogProbMatrix(net.project(ops::slice_rows(hidden, x.size(), y_prefix.size() + 1)));
    }

    require(x.size() + 1 <= max_pos, ErrorKind::LengthExceeded,
            "condition of " + std::to_string(x.size()) + " tokens exceeds max_positions " + std::to_string(max_pos));
    require(y_prefix.size() + 1 <= max_pos, ErrorKind::LengthExceeded,
            "target prefix of " + std::to_string(y_prefix.size()) + " tokens exceeds max_positions " + std::to_string(max_pos));
    TokenSequence enc_ids(x.begin(), x.end());
    enc_ids.push_back(kEosToken);
    TokenSequence dec_ids;
    dec_ids.reserve(y_prefix.size() + 1);
    dec_ids.push_back(kBosToken);
    dec_ids.insert(dec_ids.end(), y_prefix.begin(), y_prefix.end());
    const Tensor memory = net.encode(enc_ids);
    const Tensor hidden = net.decode(dec_ids, &memory);
    if (last_only) return LogProbMatrix(net.project(ops::slice_rows(hidden, dec_ids.size() - 1, 1)));
    return LogProbMatrix(net.project(hidden));
}

}  // namespace

LogProbMatrix forward(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                      std::span<const TokenId> y_prefix, const ForwardOptions& options) {
    return run_forward(params, cfg, x, y_prefix, options, false);
}

LogProbMatrix score(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                    std::span<const TokenId> y, const ForwardOptions& options) {
    require(!y.empty(), ErrorKind::EmptyInput, "score needs a nonempty target");
    return forward(params, cfg, x, y.first(y.size() - 1), options);
}

std::vector<double> next_token_logprobs(const ParameterSet& params, const ModelConfig& cfg, std::span<const TokenId> x,
                                        std::span<const TokenId> generated) {
    const LogProbMatrix lp = run_forward(params, cfg, x, generated, {}, true);
    const auto last = lp.row(0);
    return {last.begin(), last.end()};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append_le(std::string& out, double value) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xFF));
        bits >>= 8;
    }
}

double read_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const ModelConfig& cfg, const ParameterSet& params) {
    Json tensors = Json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params.entries()) {
        tensors.push_back(Json{{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
        offset += t.size() * sizeof(double);
    }
    const Json manifest{{"format_version", kCheckpointVersion},
                        {"config", to_json(cfg)},
                        {"frozen", params.frozen()},
                        {"tensors", tensors},
                        {"data_bytes", offset}};
    const std::string header = manifest.dump();
    std::string out = "lfd-checkpoint " + std::to_string(kCheckpointVersion) + " " + std::to_string(header.size()) + "\n";
    out += header;
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : params.entries()) {
        for (double v : t.values()) append_le(out, v);
    }
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    const auto newline = bytes.find('\n');
    require(newline != std::string_view::npos, ErrorKind::Parse, "checkpoint: missing preamble line");
    std::istringstream preamble{std::string(bytes.substr(0, newline))};
    std::string magic;
    int version = 0;
    std::size_t header_bytes = 0;
    preamble >> magic >> version >> header_bytes;
    require(magic == "lfd-checkpoint", ErrorKind::Parse, "checkpoint: bad magic");
    require(version == kCheckpointVersion, ErrorKind::Parse, "checkpoint: unsupported version " + std::to_string(version));
    require(newline + 1 + header_bytes <= bytes.size(), ErrorKind::Parse, "checkpoint: truncated manifest");

    Json manifest;
    try {
        manifest = Json::parse(bytes.substr(newline + 1, header_bytes));
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("checkpoint manifest: ") + e.what());
    }
    const std::string_view data = bytes.substr(newline + 1 + header_bytes);
    require(manifest.at("data_bytes").get<std::size_t>() == data.size(), ErrorKind::Parse, "checkpoint: data size mismatch");

    Checkpoint ck;
    ck.config = model_config_from_json(manifest.at("config"), "checkpoint.config");
    for (const Json& entry : manifest.at("tensors")) {
        const auto offset = entry.at("offset").get<std::size_t>();
        const auto count = entry.at("count").get<std::size_t>();
        Shape shape = entry.at("shape").get<Shape>();
        require(shape_size(shape) == count && offset + count * sizeof(double) <= data.size(), ErrorKind::Parse,
                "checkpoint: bad extent for " + entry.at("name").get<std::string>());
        std::vector<double> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = read_le(data.data() + offset + i * sizeof(double));
        ck.params.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values), true));
    }
    if (manifest.at("frozen").get<bool>()) {
        ck.params.freeze();
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write checkpoint " + path.string());
    const std::string bytes = serialize_checkpoint(cfg, params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize_checkpoint(buffer.str());
}

}  // namespace lfd::model
