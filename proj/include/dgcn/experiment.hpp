#pragma once

#include <string>
#include <vector>

#include "dgcn/config.hpp"
#include "dgcn/dataset.hpp"

namespace dgcn {

// Command drivers behind the CLI. Each returns a process exit code:
// 0 success, 2 config error, 3 numeric divergence, 4 I/O error (the
// CLI maps exceptions the same way).

struct LoadedData {
    std::vector<PreparedSample<float>> train_set;
    std::vector<PreparedSample<float>> eval_set;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    bool multilabel = false;
};

LoadedData load_dataset(const RunConfig& cfg);

// Creates the run directory (refusing to reuse a non-empty one without
// force), trains, and writes config.resolved, metrics.csv and the
// best-epoch checkpoint.
int run_train(RunConfig cfg, const std::string& out_dir, bool force);

int run_eval(const std::string& checkpoint_path, RunConfig cfg, const std::string& out_dir);

// Trains every (depth, connection) cell with otherwise identical
// hyperparameters; emits per-epoch sqrt-loss traces and a final summary.
int run_depth_sweep(RunConfig base, const std::vector<std::size_t>& depths,
                    const std::vector<std::string>& connections, const std::string& out_dir,
                    bool force);

int run_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force);

int run_knn_check(std::size_t n_points, std::size_t trials, std::uint64_t seed);

int run_gradcheck(bool inject_error);

struct BenchRow {
    std::string op;
    std::size_t saved_value_scalars = 0;
    std::size_t saved_aux_scalars = 0;
    std::size_t saved_total = 0;
    std::size_t tape_bytes = 0;
    long max_rss_kb = 0;
    double forward_ms = 0;
    double backward_ms = 0;
};

// Forward+backward through a residual backbone of cfg.model.depth
// layers on one shared graph instance; measures tape retention and wall
// time per operator.
std::vector<BenchRow> bench_operators(const RunConfig& cfg, const std::vector<std::string>& ops);

int run_bench(const RunConfig& cfg, const std::vector<std::string>& ops,
              const std::string& out_dir, bool force);

// Directory plumbing shared by commands.
void ensure_run_dir(const std::string& dir, bool force);

}  // namespace dgcn
