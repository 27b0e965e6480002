#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dgcn/gcn_ops.hpp"
#include "dgcn/knn.hpp"

namespace dgcn {

enum class Connection { Plain, Res, Dense };

inline const char* connection_name(Connection c) {
    switch (c) {
        case Connection::Plain: return "plain";
        case Connection::Res: return "res";
        case Connection::Dense: return "dense";
    }
    throw std::invalid_argument("connection_name: unknown kind");
}

inline Connection parse_connection(const std::string& s) {
    if (s == "plain") return Connection::Plain;
    if (s == "res") return Connection::Res;
    if (s == "dense") return Connection::Dense;
    throw std::invalid_argument("unknown connection '" + s + "' (expected plain|res|dense)");
}

struct ModelConfig {
    std::size_t depth = 14;
    std::size_t width = 64;
    std::size_t k = 16;
    OperatorKind op = OperatorKind::MRGCN;
    Connection connection = Connection::Res;
    double epsilon = 0.2;  // stochastic dilation probability
    bool dynamic_knn = true;
    bool fixed_edges = false;  // biological-graph mode: immutable provided edges
    std::size_t num_classes = 2;
    bool multilabel = false;
    std::size_t dilation_cap = 16;
    std::size_t input_dim = 3;
    std::size_t fusion_dim = 1024;
    std::size_t head_dim1 = 512;
    std::size_t head_dim2 = 256;
    std::size_t mlp_depth = 1;  // stages per operator mlp
    bool fusion_include_input = false;

    void validate() const {
        if (depth < 1) throw ConfigError("model: depth must be >= 1");
        if (width < 1) throw ConfigError("model: width must be >= 1");
        if (k < 1) throw ConfigError("model: k must be >= 1");
        if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
        if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
        if (epsilon < 0 || epsilon > 1) throw ConfigError("model: epsilon must be in [0,1]");
        if (dilation_cap < 1) throw ConfigError("model: dilation_cap must be >= 1");
        if (mlp_depth < 1) throw ConfigError("model: mlp_depth must be >= 1");
        if (fixed_edges && dynamic_knn)
            throw ConfigError("model: fixed_edges excludes dynamic_knn");
    }

    // Input width of backbone layer l (dense connections grow linearly).
    std::size_t layer_input_dim(std::size_t l) const {
        if (connection == Connection::Dense) return input_dim + width * l;
        return l == 0 ? input_dim : width;
    }

    // Width of the feature map the fusion block consumes.
    std::size_t fusion_input_dim() const {
        std::size_t cat = connection == Connection::Dense ? input_dim + width * depth : depth * width;
        if (fusion_include_input && connection != Connection::Dense) cat += input_dim;
        return cat;
    }

    std::string canonical_text() const;
    static ModelConfig from_text(const std::string& text);
};

// Linear dilation ramp: d = min(l+1, cap, floor((n-1)/k)), at least 1.
inline std::size_t dilation_schedule(std::size_t layer_index, std::size_t dilation_cap,
                                     std::size_t k, std::size_t n) {
    std::size_t d = std::min(layer_index + 1, dilation_cap);
    return clamp_dilation(d, k, n);
}
inline std::size_t dilation_schedule(std::size_t layer_index, const ModelConfig& cfg,
                                     std::size_t n) {
    return dilation_schedule(layer_index, cfg.dilation_cap, cfg.k, n);
}

// A stacked mini-batch: samples laid out as contiguous row segments of a
// disjoint union graph. `coords` is the metric space for edge building
// (empty in fixed-edge mode); `edges` carries provided or precomputed
// tables with globally offset ids.
template <typename T>
struct Batch {
    Tensor<T> features;
    Tensor<T> coords;
    std::vector<std::size_t> segments;
    NeighborTable edges;
    bool has_edges = false;
};

template <typename T>
using ForwardContext = PassContext<T>;

template <typename T>
struct BackboneResult {
    Tensor<T> output;
    std::vector<Tensor<T>> taps;  // post-connection features after each layer
};

template <typename T>
class DeepGCNModel {
public:
    explicit DeepGCNModel(const ModelConfig& cfg) : cfg_(cfg) { cfg_.validate(); }
    DeepGCNModel(DeepGCNModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    BackboneResult<T> backbone(const Batch<T>& batch, ForwardContext<T>& ctx) const;
    Tensor<T> forward(const Batch<T>& batch, ForwardContext<T>& ctx) const;

private:
    template <typename U>
    friend DeepGCNModel<U> build_model(const ModelConfig&, std::uint64_t);

    ModelConfig cfg_;
    ParamStore<T> store_;
    std::vector<LayerParams<T>> layers_;
    MlpStage<T> fusion_;
    MlpStage<T> head1_;
    MlpStage<T> head2_;
    Parameter<T>* head3_w = nullptr;
    Parameter<T>* head3_b = nullptr;
};

// Deterministic construction: identical (config, seed) gives identical
// parameters.
template <typename T>
DeepGCNModel<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    DeepGCNModel<T> m(cfg);
    RngStream rng(seed ^ 0x6d6f64656cULL);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        m.layers_.push_back(make_layer(m.store_, "backbone." + std::to_string(l), cfg.op,
                                       cfg.layer_input_dim(l), cfg.width, rng.fork(l),
                                       cfg.mlp_depth));
    }
    const std::size_t cat = cfg.fusion_input_dim();
    m.fusion_ = make_mlp_stage(m.store_, "fusion", cat, cfg.fusion_dim, rng.fork(1000001));
    m.head1_ = make_mlp_stage(m.store_, "head.0", cat + cfg.fusion_dim, cfg.head_dim1,
                              rng.fork(1000002));
    m.head2_ = make_mlp_stage(m.store_, "head.1", cfg.head_dim1, cfg.head_dim2, rng.fork(1000003));
    m.head3_w = &m.store_.create("head.2.w", Shape(cfg.head_dim2, cfg.num_classes));
    m.head3_b = &m.store_.create("head.2.b", Shape(cfg.num_classes));
    init_glorot(*m.head3_w, cfg.head_dim2, cfg.num_classes, rng.fork(1000004));
    init_constant(*m.head3_b, T(0));
    return m;
}

template <typename T>
std::size_t param_count(const DeepGCNModel<T>& model) {
    return model.params().trainable_scalar_count();
}

template <typename T>
BackboneResult<T> DeepGCNModel<T>::backbone(const Batch<T>& batch, ForwardContext<T>& ctx) const {
    if (batch.features.shape().rank() != 2 || batch.features.shape()[1] != cfg_.input_dim)
        throw DimensionError("forward: input features " + batch.features.shape().str() +
                             " do not match input_dim " + std::to_string(cfg_.input_dim));
    const std::size_t n = batch.features.shape()[0];
    std::vector<std::size_t> segments = batch.segments;
    if (segments.empty()) segments.push_back(n);

    NeighborTable static_edges;
    bool have_static = batch.has_edges;
    if (have_static) static_edges = batch.edges;
    if (cfg_.fixed_edges && !have_static)
        throw ConfigError("forward: fixed_edges mode needs provided edges");

    BackboneResult<T> r;
    Tensor<T> h = batch.features;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        NeighborTable table;
        if (cfg_.fixed_edges) {
            table = static_edges;
        } else if (cfg_.dynamic_knn) {
            std::size_t min_seg = segments[0];
            for (std::size_t s : segments) min_seg = std::min(min_seg, s);
            DilationPlan plan{cfg_.k, dilation_schedule(l, cfg_, min_seg), cfg_.epsilon,
                              /*deterministic=*/!ctx.training};
            const Tensor<T>& space = (l == 0 && batch.coords.size() > 0) ? batch.coords : h;
            table = knn_segmented(space.detached(), segments, plan, ctx.rng.fork(0x6b, l));
        } else if (have_static) {
            table = static_edges;
        } else {
            // Static topology from input coordinates, built once.
            const Tensor<T>& space = batch.coords.size() > 0 ? batch.coords : batch.features;
            DilationPlan plan{cfg_.k, 1, 0.0, true};
            static_edges = knn_segmented(space.detached(), segments, plan, ctx.rng);
            have_static = true;
            table = static_edges;
        }
        Tensor<T> f = operator_forward(Graph<T>(h, table), layers_[l], ctx);
        switch (cfg_.connection) {
            case Connection::Plain: h = f; break;
            case Connection::Res: h = (h.channels() == f.channels()) ? add_features(f, h) : f; break;
            case Connection::Dense: h = concat_features<T>({h, f}); break;
        }
        r.taps.push_back(h);
    }
    r.output = h;
    return r;
}

template <typename T>
Tensor<T> DeepGCNModel<T>::forward(const Batch<T>& batch, ForwardContext<T>& ctx) const {
    BackboneResult<T> bb = backbone(batch, ctx);
    std::vector<std::size_t> segments = batch.segments;
    if (segments.empty()) segments.push_back(batch.features.shape()[0]);

    Tensor<T> cat;
    if (cfg_.connection == Connection::Dense) {
        cat = bb.output;  // dense state already concatenates every layer
    } else {
        std::vector<Tensor<T>> parts;
        if (cfg_.fusion_include_input) parts.push_back(batch.features);
        parts.insert(parts.end(), bb.taps.begin(), bb.taps.end());
        cat = parts.size() == 1 ? parts[0] : concat_features(parts);
    }

    Tensor<T> fused = apply_mlp_stage(cat, fusion_, ctx);
    Tensor<T> global = segment_max(fused, segments);
    Tensor<T> head_in = concat_last<T>({cat, segment_broadcast(global, segments)});

    Tensor<T> h1 = apply_mlp_stage(head_in, head1_, ctx);
    h1 = dropout(h1, ctx.dropout, ctx.training, ctx.rng.fork(0xd7070));
    Tensor<T> h2 = apply_mlp_stage(h1, head2_, ctx);
    return bias_add(matmul(h2, head3_w->use(ctx.tape)), head3_b->use(ctx.tape));
}

// ---------------------------------------------------------------------------
// Config text and checkpoints

inline std::string ModelConfig::canonical_text() const {
    char eps[32];
    std::snprintf(eps, sizeof(eps), "%.9g", epsilon);
    std::map<std::string, std::string> kv = {
        {"connection", connection_name(connection)},
        {"depth", std::to_string(depth)},
        {"dilation_cap", std::to_string(dilation_cap)},
        {"dynamic_knn", dynamic_knn ? "true" : "false"},
        {"epsilon", eps},
        {"fixed_edges", fixed_edges ? "true" : "false"},
        {"fusion_dim", std::to_string(fusion_dim)},
        {"fusion_include_input", fusion_include_input ? "true" : "false"},
        {"head_dim1", std::to_string(head_dim1)},
        {"head_dim2", std::to_string(head_dim2)},
        {"input_dim", std::to_string(input_dim)},
        {"k", std::to_string(k)},
        {"mlp_depth", std::to_string(mlp_depth)},
        {"multilabel", multilabel ? "true" : "false"},
        {"num_classes", std::to_string(num_classes)},
        {"operator", operator_name(op)},
        {"width", std::to_string(width)},
    };
    std::string out;
    for (const auto& [k2, v] : kv) out += k2 + " = " + v + "\n";
    return out;
}

inline ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        std::size_t eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 3);
        auto b = [&] { return val == "true"; };
        if (key == "connection") cfg.connection = parse_connection(val);
        else if (key == "depth") cfg.depth = std::stoul(val);
        else if (key == "dilation_cap") cfg.dilation_cap = std::stoul(val);
        else if (key == "dynamic_knn") cfg.dynamic_knn = b();
        else if (key == "epsilon") cfg.epsilon = std::stod(val);
        else if (key == "fixed_edges") cfg.fixed_edges = b();
        else if (key == "fusion_dim") cfg.fusion_dim = std::stoul(val);
        else if (key == "fusion_include_input") cfg.fusion_include_input = b();
        else if (key == "head_dim1") cfg.head_dim1 = std::stoul(val);
        else if (key == "head_dim2") cfg.head_dim2 = std::stoul(val);
        else if (key == "input_dim") cfg.input_dim = std::stoul(val);
        else if (key == "k") cfg.k = std::stoul(val);
        else if (key == "mlp_depth") cfg.mlp_depth = std::stoul(val);
        else if (key == "multilabel") cfg.multilabel = b();
        else if (key == "num_classes") cfg.num_classes = std::stoul(val);
        else if (key == "operator") cfg.op = parse_operator(val);
        else if (key == "width") cfg.width = std::stoul(val);
        else throw ConfigError("checkpoint config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline constexpr char kCheckpointMagic[4] = {'D', 'G', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

// Layout: magic "DGCN" | u32 version | u32 config byte count | config
// text | all store entries as raw f32, in store iteration order.
template <typename T>
void save_checkpoint(const DeepGCNModel<T>& model, const std::string& path,
                     std::uint64_t seed = 0) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kCheckpointMagic, 4);
    std::uint32_t ver = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    std::string cfg = model.config().canonical_text();
    cfg += "seed = " + std::to_string(seed) + "\n";
    std::uint32_t len = static_cast<std::uint32_t>(cfg.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto& store = model.params();
    for (std::size_t i = 0; i < store.entry_count(); ++i) {
        const auto& p = store.entry(i);
        for (std::size_t j = 0; j < p.size(); ++j) {
            float v = static_cast<float>((*p.value)[j]);
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!f) throw IoError("short write to checkpoint: " + path);
}

template <typename T>
DeepGCNModel<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint32_t ver = 0, len = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    if (!f || ver != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);
    f.read(reinterpret_cast<char*>(&len), 4);
    if (!f || len > (1u << 20)) throw IoError("corrupt checkpoint header in " + path);
    std::string cfg_text(len, '\0');
    f.read(cfg_text.data(), len);
    if (!f) throw IoError("truncated checkpoint config in " + path);

    std::uint64_t seed = 0;
    std::string filtered;
    std::size_t pos = 0;
    while (pos < cfg_text.size()) {
        std::size_t eol = cfg_text.find('\n', pos);
        if (eol == std::string::npos) eol = cfg_text.size();
        std::string line = cfg_text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.rfind("seed = ", 0) == 0) seed = std::stoull(line.substr(7));
        else if (!line.empty()) filtered += line + "\n";
    }
    ModelConfig cfg = ModelConfig::from_text(filtered);
    DeepGCNModel<T> model = build_model<T>(cfg, seed);
    auto& store = model.params();
    for (std::size_t i = 0; i < store.entry_count(); ++i) {
        auto& p = store.entry(i);
        for (std::size_t j = 0; j < p.size(); ++j) {
            float v;
            f.read(reinterpret_cast<char*>(&v), 4);
            if (!f) throw IoError("truncated checkpoint parameters in " + path);
            (*p.value)[j] = static_cast<T>(v);
        }
    }
    return model;
}

}  // namespace dgcn
