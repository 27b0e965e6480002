#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgcn/graph.hpp"
#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

// Labeled point cloud: 3D coordinates, optional extra channels appended
// as columns, one class label per point.
struct PointCloudSample {
    std::size_t n = 0;
    std::size_t extra_dim = 0;
    std::vector<float> coords;  // n x 3
    std::vector<float> extras;  // n x extra_dim
    std::vector<int> labels;    // n

    std::size_t feature_dim() const { return 3 + extra_dim; }
};

// Labeled graph with provided edges (biological-graph mode). Multi-label
// targets are an n x num_classes 0/1 matrix.
struct FixedGraphSample {
    std::size_t n = 0;
    std::size_t feat_dim = 0;
    std::size_t num_classes = 0;
    std::vector<float> features;              // n x feat_dim
    std::vector<std::pair<int, int>> edges;   // directed
    std::vector<std::uint8_t> multilabels;    // n x num_classes
    std::string split = "train";              // train|val|test
    std::vector<int> isolated;                // vertices with no edges
};

struct SyntheticOptions {
    std::size_t min_parts = 2;
    std::size_t max_parts = 4;
    double noise_sigma = 0.01;
};

// Composite shapes assembled from sphere/cylinder/box surface patches,
// one part label per primitive, randomly placed and oriented.
// Deterministic given the seed.
std::vector<PointCloudSample> gen_synthetic_parts(std::size_t n_points, std::size_t n_shapes,
                                                  std::uint64_t seed,
                                                  const SyntheticOptions& opts = {});

// CSV with header "x,y,z[,f1..fm],label", 9 significant digits.
void save_pointcloud_csv(const PointCloudSample& cloud, const std::string& path);
PointCloudSample load_pointcloud_csv(const std::string& path);

// Axis-aligned column crop of `block_size` footprint resampled to
// exactly n_out points, with coordinates normalized within the block
// appended as 3 extra channels.
PointCloudSample block_sample(const PointCloudSample& cloud, double block_size,
                              std::size_t n_out, const RngStream& rng);

// Node-link text file (one graph object or an array of them) with
// sibling feats.csv / labels.csv indexed by global node id. Undirected
// links are expanded to both directions.
std::vector<FixedGraphSample> load_nodelink_json(const std::string& path);

struct FixedFanInResult {
    NeighborTable table;
    std::vector<int> padded;    // vertices with 1 <= degree < k
    std::vector<int> isolated;  // vertices mapped to a stand-in neighbor
};

// Adapt a variable-degree edge list to the engine's fixed fan-in table:
// sample without replacement when degree >= k, pad by repeating true
// neighbors when 0 < degree < k, and point isolated vertices at the
// nearest-id non-self vertex (flagged).
FixedFanInResult fixed_edges_to_table(const FixedGraphSample& sample, std::size_t k,
                                      const RngStream& rng);

}  // namespace dgcn
