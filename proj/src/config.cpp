#include "dgcn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dgcn {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        long long x = std::stoll(v);
        if (x < 0) throw ConfigError(key + ": must be non-negative");
        return static_cast<std::size_t>(x);
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void RunConfig::apply_set(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "model.depth") model.depth = parse_size(key, v);
    else if (key == "model.width") model.width = parse_size(key, v);
    else if (key == "model.k") model.k = parse_size(key, v);
    else if (key == "model.operator") model.op = parse_operator(v);
    else if (key == "model.connection") model.connection = parse_connection(v);
    else if (key == "model.epsilon") model.epsilon = parse_double(key, v);
    else if (key == "model.dynamic_knn") model.dynamic_knn = parse_bool(key, v);
    else if (key == "model.fixed_edges") model.fixed_edges = parse_bool(key, v);
    else if (key == "model.num_classes") model.num_classes = parse_size(key, v);
    else if (key == "model.multilabel") model.multilabel = parse_bool(key, v);
    else if (key == "model.dilation_cap") model.dilation_cap = parse_size(key, v);
    else if (key == "model.input_dim") model.input_dim = parse_size(key, v);
    else if (key == "model.fusion_dim") model.fusion_dim = parse_size(key, v);
    else if (key == "model.head_dim1") model.head_dim1 = parse_size(key, v);
    else if (key == "model.head_dim2") model.head_dim2 = parse_size(key, v);
    else if (key == "model.mlp_depth") model.mlp_depth = parse_size(key, v);
    else if (key == "model.fusion_include_input") model.fusion_include_input = parse_bool(key, v);
    else if (key == "train.lr0") train.lr0 = parse_double(key, v);
    else if (key == "train.decay_factor") train.decay_factor = parse_double(key, v);
    else if (key == "train.decay_every") train.decay_every = parse_size(key, v);
    else if (key == "train.epochs") train.epochs = parse_size(key, v);
    else if (key == "train.batch_size") train.batch_size = parse_size(key, v);
    else if (key == "train.seed") train.seed = parse_size(key, v);
    else if (key == "train.dropout") train.dropout = parse_double(key, v);
    else if (key == "train.eval_every") train.eval_every = parse_size(key, v);
    else if (key == "data.kind") {
        if (v != "synthetic" && v != "csv_dir" && v != "nodelink")
            throw ConfigError("data.kind: expected synthetic|csv_dir|nodelink, got '" + v + "'");
        data_kind = v;
    } else if (key == "data.samples") data_samples = parse_size(key, v);
    else if (key == "data.points") data_points = parse_size(key, v);
    else if (key == "data.min_parts") data_min_parts = parse_size(key, v);
    else if (key == "data.max_parts") data_max_parts = parse_size(key, v);
    else if (key == "data.noise") data_noise = parse_double(key, v);
    else if (key == "data.val_fraction") data_val_fraction = parse_double(key, v);
    else if (key == "data.path") data_path = v;
    else if (key == "data.seed") data_seed = parse_size(key, v);
    else if (key == "data.block") data_block = parse_bool(key, v);
    else if (key == "data.block_size") data_block_size = parse_double(key, v);
    else if (key == "data.block_points") data_block_points = parse_size(key, v);
    else
        throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train" && section != "data")
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any section");
        apply_set(section + "." + key, line.substr(eq + 1));
    }
}

void RunConfig::finalize() {
    if (data_seed == 0) data_seed = train.seed;
    model.validate();
    train.validate();
    if (data_kind == "nodelink" && data_path.empty())
        throw ConfigError("data.kind = nodelink requires data.path");
    if (data_kind == "csv_dir" && data_path.empty())
        throw ConfigError("data.kind = csv_dir requires data.path");
    if (data_min_parts < 1 || data_max_parts < data_min_parts)
        throw ConfigError("data: invalid part range");
    if (data_val_fraction < 0 || data_val_fraction >= 1)
        throw ConfigError("data.val_fraction must be in [0,1)");
}

std::string RunConfig::resolved_text() const {
    std::ostringstream o;
    o << "[model]\n" << model.canonical_text();
    o << "\n[train]\n";
    o << "batch_size = " << train.batch_size << "\n";
    o << "decay_every = " << train.decay_every << "\n";
    o << "decay_factor = " << fmt(train.decay_factor) << "\n";
    o << "dropout = " << fmt(train.dropout) << "\n";
    o << "epochs = " << train.epochs << "\n";
    o << "eval_every = " << train.eval_every << "\n";
    o << "lr0 = " << fmt(train.lr0) << "\n";
    o << "seed = " << train.seed << "\n";
    o << "\n[data]\n";
    o << "block = " << (data_block ? "true" : "false") << "\n";
    o << "block_points = " << data_block_points << "\n";
    o << "block_size = " << fmt(data_block_size) << "\n";
    o << "kind = " << data_kind << "\n";
    o << "max_parts = " << data_max_parts << "\n";
    o << "min_parts = " << data_min_parts << "\n";
    o << "noise = " << fmt(data_noise) << "\n";
    o << "path = " << data_path << "\n";
    o << "points = " << data_points << "\n";
    o << "samples = " << data_samples << "\n";
    o << "seed = " << effective_data_seed() << "\n";
    o << "val_fraction = " << fmt(data_val_fraction) << "\n";
    return o.str();
}

}  // namespace dgcn
