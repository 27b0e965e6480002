#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "dgcn/experiment.hpp"
#include "dgcn/version.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_out = true) {
    cmd->add_option("--config", o.config_path, "Config file (sectioned key = value)");
    cmd->add_option("--set", o.sets, "Override, e.g. --set model.depth=28")->take_all();
    cmd->add_option("--seed", o.seed, "Training seed override")->each([&o](const std::string&) {
        o.seed_given = true;
    });
    if (with_out) cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_flag("--force", o.force, "Allow writing into a non-empty output directory");
}

dgcn::RunConfig build_config(const CommonOpts& o) {
    dgcn::RunConfig cfg;
    if (!o.config_path.empty()) cfg.apply_file(o.config_path);
    for (const std::string& s : o.sets) {
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw dgcn::ConfigError("--set expects key=value, got '" + s + "'");
        cfg.apply_set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed_given) cfg.train.seed = o.seed;
    return cfg;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(std::stoul(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_names(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(csv.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep graph-convolutional network engine"};
    app.set_version_flag("--version", std::string("dgcn ") + dgcn::kVersion);
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, sweep_o, bench_o, gen_o;
    std::string eval_checkpoint;
    std::string sweep_depths = "7,14,28";
    std::string sweep_connections = "plain,res";
    std::string bench_ops = "edgeconv,mrgcn,sage,sage_n,gin,mean";
    std::size_t knn_points = 200, knn_trials = 100;
    std::uint64_t knn_seed = 1;
    bool inject_error = false;

    auto* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
    add_common(train_cmd, train_o);
    train_cmd->callback([&] {
        if (train_o.out_dir.empty()) throw dgcn::ConfigError("train requires --out DIR");
    });

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
    add_common(eval_cmd, eval_o);

    auto* sweep_cmd =
        app.add_subcommand("depth-sweep", "Train a (depth x connection) grid, emit loss traces");
    sweep_cmd->add_option("--depths", sweep_depths, "Comma-separated depths");
    sweep_cmd->add_option("--connections", sweep_connections, "Comma-separated connections");
    add_common(sweep_cmd, sweep_o);
    sweep_cmd->callback([&] {
        if (sweep_o.out_dir.empty()) throw dgcn::ConfigError("depth-sweep requires --out DIR");
    });

    auto* grad_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of all primitives and operators");
    grad_cmd->add_flag("--inject-error", inject_error,
                       "Corrupt one analytic gradient to verify the checker reports failures");

    auto* knn_cmd = app.add_subcommand("knn-check", "Dilated k-NN oracle equivalence runs");
    knn_cmd->add_option("--points", knn_points, "Max points per instance");
    knn_cmd->add_option("--trials", knn_trials, "Random instances");
    knn_cmd->add_option("--seed", knn_seed, "Seed");

    auto* bench_cmd = app.add_subcommand("bench", "Operator memory/throughput benchmark");
    bench_cmd->add_option("--operators", bench_ops, "Comma-separated operator names");
    add_common(bench_cmd, bench_o);

    auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV files");
    add_common(gen_cmd, gen_o);
    gen_cmd->callback([&] {
        if (gen_o.out_dir.empty()) throw dgcn::ConfigError("gen-data requires --out DIR");
    });

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed())
            return dgcn::run_train(build_config(train_o), train_o.out_dir, train_o.force);
        if (eval_cmd->parsed())
            return dgcn::run_eval(eval_checkpoint, build_config(eval_o), eval_o.out_dir);
        if (sweep_cmd->parsed())
            return dgcn::run_depth_sweep(build_config(sweep_o), parse_sizes(sweep_depths),
                                         parse_names(sweep_connections), sweep_o.out_dir,
                                         sweep_o.force);
        if (grad_cmd->parsed()) return dgcn::run_gradcheck(inject_error);
        if (knn_cmd->parsed()) return dgcn::run_knn_check(knn_points, knn_trials, knn_seed);
        if (bench_cmd->parsed())
            return dgcn::run_bench(build_config(bench_o), parse_names(bench_ops), bench_o.out_dir,
                                   bench_o.force);
        if (gen_cmd->parsed()) return dgcn::run_gen_data(build_config(gen_o), gen_o.out_dir,
                                                         gen_o.force);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const dgcn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dgcn::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const dgcn::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
