#include "dgcn/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dgcn {

namespace {

using Vec3 = std::array<double, 3>;

// Rotation from a uniformly random unit quaternion.
std::array<double, 9> random_rotation(const RngStream& rng) {
    double u1 = rng.uniform(0), u2 = rng.uniform(1), u3 = rng.uniform(2);
    const double two_pi = 6.283185307179586;
    double a = std::sqrt(1 - u1), b = std::sqrt(u1);
    double qx = a * std::sin(two_pi * u2), qy = a * std::cos(two_pi * u2);
    double qz = b * std::sin(two_pi * u3), qw = b * std::cos(two_pi * u3);
    return {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw),
            2 * (qx * qy + qz * qw),     1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
            2 * (qx * qz - qy * qw),     2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)};
}

Vec3 apply(const std::array<double, 9>& r, const Vec3& p) {
    return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2], r[3] * p[0] + r[4] * p[1] + r[5] * p[2],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2]};
}

// Surface point of primitive `kind` (0 sphere, 1 cylinder side, 2 box),
// centered at the origin with unit nominal extent.
Vec3 primitive_point(int kind, const RngStream& rng, std::uint64_t i) {
    const double two_pi = 6.283185307179586;
    switch (kind) {
        case 0: {  // sphere
            double x = rng.normal(4 * i), y = rng.normal(4 * i + 1), z = rng.normal(4 * i + 2);
            double n = std::sqrt(x * x + y * y + z * z);
            if (n < 1e-12) return {1, 0, 0};
            return {x / n, y / n, z / n};
        }
        case 1: {  // cylinder side, radius 0.7, height 2
            double phi = two_pi * rng.uniform(4 * i);
            double z = 2.0 * rng.uniform(4 * i + 1) - 1.0;
            return {0.7 * std::cos(phi), 0.7 * std::sin(phi), z};
        }
        default: {  // axis-aligned unit box surface
            int face = static_cast<int>(rng.below(4 * i, 6));
            double u = 2.0 * rng.uniform(4 * i + 1) - 1.0;
            double v = 2.0 * rng.uniform(4 * i + 2) - 1.0;
            switch (face) {
                case 0: return {1, u, v};
                case 1: return {-1, u, v};
                case 2: return {u, 1, v};
                case 3: return {u, -1, v};
                case 4: return {u, v, 1};
                default: return {u, v, -1};
            }
        }
    }
}

}  // namespace

std::vector<PointCloudSample> gen_synthetic_parts(std::size_t n_points, std::size_t n_shapes,
                                                  std::uint64_t seed, const SyntheticOptions& opts) {
    if (n_points < 64) throw std::invalid_argument("gen_synthetic_parts: need n_points >= 64");
    if (opts.min_parts < 1 || opts.max_parts < opts.min_parts)
        throw std::invalid_argument("gen_synthetic_parts: bad part range");
    std::vector<PointCloudSample> out;
    out.reserve(n_shapes);
    RngStream root(seed ^ 0x70617274ULL);
    const double two_pi = 6.283185307179586;

    for (std::size_t s = 0; s < n_shapes; ++s) {
        RngStream srng = root.fork(s);
        std::size_t parts = opts.min_parts;
        if (opts.max_parts > opts.min_parts) {
            // Weight sizes by s^2 so rarer high labels still receive a
            // within-factor-3 share of points across the dataset.
            double wsum = 0;
            for (std::size_t p = opts.min_parts; p <= opts.max_parts; ++p)
                wsum += static_cast<double>(p * p);
            double u = srng.uniform(0) * wsum, acc = 0;
            for (std::size_t p = opts.min_parts; p <= opts.max_parts; ++p) {
                acc += static_cast<double>(p * p);
                if (u < acc) {
                    parts = p;
                    break;
                }
            }
        }

        PointCloudSample sample;
        sample.n = n_points;
        sample.coords.resize(n_points * 3);
        sample.labels.resize(n_points);

        std::size_t base = 0;
        for (std::size_t part = 0; part < parts; ++part) {
            std::size_t count = n_points / parts + (part < n_points % parts ? 1 : 0);
            RngStream prng = srng.fork(1 + part);
            int kind = static_cast<int>(part % 3);
            double scl = 0.3 + 0.3 * prng.uniform(0);
            double angle = two_pi * static_cast<double>(part) / static_cast<double>(parts) +
                           0.25 * (prng.uniform(1) - 0.5);
            Vec3 center = {1.5 * std::cos(angle) + 0.1 * (prng.uniform(2) - 0.5),
                           1.5 * std::sin(angle) + 0.1 * (prng.uniform(3) - 0.5),
                           0.4 * (prng.uniform(4) - 0.5)};
            auto rot = random_rotation(prng.fork(9));
            RngStream pts = prng.fork(10);
            for (std::size_t i = 0; i < count; ++i) {
                Vec3 p = primitive_point(kind, pts, i);
                p = apply(rot, {p[0] * scl, p[1] * scl, p[2] * scl});
                for (int c = 0; c < 3; ++c)
                    p[static_cast<std::size_t>(c)] += center[static_cast<std::size_t>(c)] +
                        opts.noise_sigma * pts.fork(7).normal(3 * i + static_cast<std::uint64_t>(c));
                sample.coords[(base + i) * 3 + 0] = static_cast<float>(p[0]);
                sample.coords[(base + i) * 3 + 1] = static_cast<float>(p[1]);
                sample.coords[(base + i) * 3 + 2] = static_cast<float>(p[2]);
                sample.labels[base + i] = static_cast<int>(part);
            }
            base += count;
        }
        out.push_back(std::move(sample));
    }
    return out;
}

void save_pointcloud_csv(const PointCloudSample& cloud, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "x,y,z";
    for (std::size_t j = 0; j < cloud.extra_dim; ++j) f << ",f" << (j + 1);
    f << ",label\n";
    char buf[64];
    for (std::size_t i = 0; i < cloud.n; ++i) {
        for (int c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(cloud.coords[i * 3 + static_cast<std::size_t>(c)]));
            f << (c ? "," : "") << buf;
        }
        for (std::size_t j = 0; j < cloud.extra_dim; ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(cloud.extras[i * cloud.extra_dim + j]));
            f << ',' << buf;
        }
        f << ',' << cloud.labels[i] << '\n';
    }
    if (!f) throw IoError("short write: " + path);
}

PointCloudSample load_pointcloud_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path, 1, "empty file");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    if (cols.size() < 4 || cols[0] != "x" || cols[1] != "y" || cols[2] != "z")
        throw ParseError(path, 1, "expected header x,y,z[,f1..fm],label");
    if (cols.back() != "label") throw ParseError(path, 1, "missing label column");
    const std::size_t extra = cols.size() - 4;

    PointCloudSample cloud;
    cloud.extra_dim = extra;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) {
            double v;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw ParseError(path, lineno, "bad numeric field '" + cell + "'");
            vals.push_back(v);
        }
        if (vals.size() != cols.size())
            throw ParseError(path, lineno, "expected " + std::to_string(cols.size()) + " fields, got " +
                                               std::to_string(vals.size()));
        for (std::size_t c = 0; c + 1 < vals.size(); ++c)
            if (!std::isfinite(vals[c])) throw ParseError(path, lineno, "non-finite value");
        for (int c = 0; c < 3; ++c) cloud.coords.push_back(static_cast<float>(vals[static_cast<std::size_t>(c)]));
        for (std::size_t j = 0; j < extra; ++j) cloud.extras.push_back(static_cast<float>(vals[3 + j]));
        double lab = vals.back();
        if (lab != std::floor(lab) || lab < 0) throw ParseError(path, lineno, "label must be a non-negative integer");
        cloud.labels.push_back(static_cast<int>(lab));
        ++cloud.n;
    }
    if (cloud.n == 0) throw ParseError(path, lineno, "no data rows");
    return cloud;
}

PointCloudSample block_sample(const PointCloudSample& cloud, double block_size, std::size_t n_out,
                              const RngStream& rng) {
    if (cloud.n == 0) throw std::invalid_argument("block_sample: empty cloud");
    if (block_size <= 0) throw std::invalid_argument("block_sample: block_size must be > 0");
    if (n_out < 1) throw std::invalid_argument("block_sample: n_out must be >= 1");

    std::vector<std::size_t> inside;
    for (int attempt = 0; attempt < 10; ++attempt) {
        std::size_t center = rng.below(100 + static_cast<std::uint64_t>(attempt), cloud.n);
        double cx = cloud.coords[center * 3 + 0], cy = cloud.coords[center * 3 + 1];
        inside.clear();
        for (std::size_t i = 0; i < cloud.n; ++i) {
            if (std::abs(cloud.coords[i * 3 + 0] - cx) <= block_size / 2 &&
                std::abs(cloud.coords[i * 3 + 1] - cy) <= block_size / 2)
                inside.push_back(i);
        }
        if (!inside.empty()) break;
    }
    if (inside.empty()) throw NumericError("block_sample: empty block after 10 retries");

    std::vector<std::size_t> chosen(n_out);
    if (inside.size() >= n_out) {
        std::vector<int> pick = rng.fork(1).sample_without_replacement(
            0, static_cast<int>(inside.size()), static_cast<int>(n_out));
        for (std::size_t i = 0; i < n_out; ++i) chosen[i] = inside[static_cast<std::size_t>(pick[i])];
    } else {
        RngStream rs = rng.fork(2);
        for (std::size_t i = 0; i < n_out; ++i) chosen[i] = inside[rs.below(i, inside.size())];
    }

    PointCloudSample out;
    out.n = n_out;
    out.extra_dim = cloud.extra_dim + 3;
    out.coords.resize(n_out * 3);
    out.extras.resize(n_out * out.extra_dim);
    out.labels.resize(n_out);

    double mn[3], mx[3];
    for (int c = 0; c < 3; ++c) {
        mn[c] = cloud.coords[chosen[0] * 3 + static_cast<std::size_t>(c)];
        mx[c] = mn[c];
    }
    for (std::size_t i = 0; i < n_out; ++i) {
        for (int c = 0; c < 3; ++c) {
            double v = cloud.coords[chosen[i] * 3 + static_cast<std::size_t>(c)];
            mn[c] = std::min(mn[c], v);
            mx[c] = std::max(mx[c], v);
        }
    }
    for (std::size_t i = 0; i < n_out; ++i) {
        const std::size_t src = chosen[i];
        for (int c = 0; c < 3; ++c)
            out.coords[i * 3 + static_cast<std::size_t>(c)] = cloud.coords[src * 3 + static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < cloud.extra_dim; ++j)
            out.extras[i * out.extra_dim + j] = cloud.extras[src * cloud.extra_dim + j];
        for (int c = 0; c < 3; ++c) {
            double span = mx[c] - mn[c];
            double norm = span > 0 ? (cloud.coords[src * 3 + static_cast<std::size_t>(c)] - mn[c]) / span : 0.0;
            out.extras[i * out.extra_dim + cloud.extra_dim + static_cast<std::size_t>(c)] =
                static_cast<float>(norm);
        }
        out.labels[i] = cloud.labels[src];
    }
    return out;
}

namespace {

std::vector<std::vector<double>> load_numeric_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            double v;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw ParseError(path, lineno, "bad numeric field '" + cell + "'");
            if (!std::isfinite(v)) throw ParseError(path, lineno, "non-finite value");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows[0].size())
            throw ParseError(path, lineno, "inconsistent column count");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sibling(const std::string& path, const std::string& name) {
    std::size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? name : path.substr(0, slash + 1) + name;
}

}  // namespace

std::vector<FixedGraphSample> load_nodelink_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    nlohmann::json doc;
    try {
        f >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path, 0, std::string("invalid json: ") + e.what());
    }
    std::vector<nlohmann::json> graphs;
    if (doc.is_array())
        graphs.assign(doc.begin(), doc.end());
    else
        graphs.push_back(doc);

    auto feats = load_numeric_csv(sibling(path, "feats.csv"));
    auto labels = load_numeric_csv(sibling(path, "labels.csv"));
    if (feats.size() != labels.size())
        throw IoError("feats.csv and labels.csv row counts differ");

    std::size_t total_nodes = 0;
    for (const auto& g : graphs) {
        if (!g.contains("nodes") || !g.contains("links"))
            throw IoError(path + ": graph object needs 'nodes' and 'links'");
        total_nodes += g["nodes"].size();
    }
    if (feats.size() != total_nodes)
        throw IoError("feats.csv has " + std::to_string(feats.size()) + " rows, node count is " +
                      std::to_string(total_nodes));

    const std::size_t feat_dim = feats.empty() ? 0 : feats[0].size();
    const std::size_t num_classes = labels.empty() ? 0 : labels[0].size();

    std::vector<FixedGraphSample> out;
    std::set<long> seen_ids;
    for (const auto& g : graphs) {
        FixedGraphSample s;
        std::map<long, int> local;  // global id -> local index, id-sorted
        std::string split;
        for (const auto& nd : g["nodes"]) {
            long id = nd.at("id").get<long>();
            if (!seen_ids.insert(id).second)
                throw IoError(path + ": duplicate node id " + std::to_string(id));
            if (id < 0 || static_cast<std::size_t>(id) >= total_nodes)
                throw IoError(path + ": node id " + std::to_string(id) + " outside [0,N)");
            local[id] = 0;
            std::string nsplit = nd.value("split", "train");
            if (split.empty()) split = nsplit;
            else if (split != nsplit)
                throw IoError(path + ": mixed split tags within one graph");
        }
        s.split = split.empty() ? "train" : split;
        s.n = local.size();
        s.feat_dim = feat_dim;
        s.num_classes = num_classes;
        int next = 0;
        for (auto& [id, idx] : local) idx = next++;
        s.features.resize(s.n * feat_dim);
        s.multilabels.resize(s.n * num_classes);
        for (const auto& [id, idx] : local) {
            const auto& frow = feats[static_cast<std::size_t>(id)];
            const auto& lrow = labels[static_cast<std::size_t>(id)];
            for (std::size_t j = 0; j < feat_dim; ++j)
                s.features[static_cast<std::size_t>(idx) * feat_dim + j] = static_cast<float>(frow[j]);
            for (std::size_t j = 0; j < num_classes; ++j) {
                double v = lrow[j];
                if (v != 0.0 && v != 1.0) throw IoError("labels.csv: entries must be 0/1");
                s.multilabels[static_cast<std::size_t>(idx) * num_classes + j] =
                    static_cast<std::uint8_t>(v);
            }
        }
        std::set<std::pair<int, int>> edge_set;
        for (const auto& e : g["links"]) {
            long src = e.at("source").get<long>(), dst = e.at("target").get<long>();
            auto is = local.find(src), id2 = local.find(dst);
            if (is == local.end() || id2 == local.end())
                throw IoError(path + ": dangling edge " + std::to_string(src) + "->" +
                              std::to_string(dst));
            if (src == dst) continue;
            edge_set.insert({is->second, id2->second});
            edge_set.insert({id2->second, is->second});
        }
        s.edges.assign(edge_set.begin(), edge_set.end());
        std::vector<char> has_edge(s.n, 0);
        for (const auto& [a, b] : s.edges) has_edge[static_cast<std::size_t>(a)] = 1;
        for (std::size_t v = 0; v < s.n; ++v)
            if (!has_edge[v]) s.isolated.push_back(static_cast<int>(v));
        out.push_back(std::move(s));
    }
    return out;
}

FixedFanInResult fixed_edges_to_table(const FixedGraphSample& sample, std::size_t k,
                                      const RngStream& rng) {
    if (k < 1) throw std::invalid_argument("fixed_edges_to_table: k must be >= 1");
    if (sample.n < 2) throw std::invalid_argument("fixed_edges_to_table: need at least 2 vertices");
    std::vector<std::vector<int>> adj(sample.n);
    for (const auto& [a, b] : sample.edges) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= sample.n ||
            static_cast<std::size_t>(b) >= sample.n)
            throw std::out_of_range("fixed_edges_to_table: edge endpoint out of range");
        if (a != b) adj[static_cast<std::size_t>(a)].push_back(b);
    }
    for (auto& lst : adj) {
        std::sort(lst.begin(), lst.end());
        lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
    }

    FixedFanInResult res;
    auto idx = std::make_shared<std::vector<int>>(sample.n * k);
    for (std::size_t v = 0; v < sample.n; ++v) {
        const auto& nb = adj[v];
        RngStream vr = rng.fork(v);
        int* row = idx->data() + v * k;
        if (nb.empty()) {
            int stand_in = v == 0 ? 1 : 0;
            for (std::size_t j = 0; j < k; ++j) row[j] = stand_in;
            res.isolated.push_back(static_cast<int>(v));
        } else if (nb.size() >= k) {
            std::vector<int> pick = vr.sample_without_replacement(0, static_cast<int>(nb.size()),
                                                                  static_cast<int>(k));
            for (std::size_t j = 0; j < k; ++j) row[j] = nb[static_cast<std::size_t>(pick[j])];
        } else {
            std::size_t filled = 0;
            std::uint64_t round = 0;
            while (filled < k) {
                std::size_t take = std::min(nb.size(), k - filled);
                std::vector<int> pick = vr.sample_without_replacement(
                    1 + round, static_cast<int>(nb.size()), static_cast<int>(take));
                for (std::size_t j = 0; j < take; ++j) row[filled + j] = nb[static_cast<std::size_t>(pick[j])];
                filled += take;
                ++round;
            }
            res.padded.push_back(static_cast<int>(v));
        }
    }
    res.table = NeighborTable(sample.n, k, std::move(idx), /*allow_duplicates=*/true);
    return res;
}

}  // namespace dgcn
