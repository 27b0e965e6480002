#include "dgcn/experiment.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include "dgcn/version.hpp"

namespace dgcn {

namespace fs = std::filesystem;

namespace {

long current_max_rss_kb() {
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return ru.ru_maxrss;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << content;
    if (!f) throw IoError("short write to " + path);
}

// Mean of the last up-to-5 per-epoch losses.
double smoothed_final_loss(const MetricsReport& r) {
    if (r.trace.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t n = std::min<std::size_t>(5, r.trace.size());
    double acc = 0;
    for (std::size_t i = r.trace.size() - n; i < r.trace.size(); ++i) acc += r.trace[i].loss;
    return acc / static_cast<double>(n);
}

}  // namespace

void ensure_run_dir(const std::string& dir, bool force) {
    fs::path p(dir);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw IoError(dir + " exists and is not a directory");
        if (!fs::is_empty(p) && !force)
            throw IoError("output directory " + dir + " is not empty (use --force to overwrite)");
    }
    fs::create_directories(p);
}

LoadedData load_dataset(const RunConfig& cfg) {
    LoadedData out;
    const std::uint64_t dseed = cfg.effective_data_seed();

    if (cfg.data_kind == "synthetic") {
        SyntheticOptions opts{cfg.data_min_parts, cfg.data_max_parts, cfg.data_noise};
        auto clouds = gen_synthetic_parts(cfg.data_points, cfg.data_samples, dseed, opts);
        int max_label = 0;
        for (const auto& c : clouds)
            for (int lab : c.labels) max_label = std::max(max_label, lab);
        out.input_dim = 3;
        out.num_classes = static_cast<std::size_t>(max_label) + 1;
        out.multilabel = false;

        std::vector<std::size_t> order(clouds.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(dseed ^ 0x5717ULL);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t n_val = static_cast<std::size_t>(cfg.data_val_fraction *
                                                     static_cast<double>(clouds.size()));
        std::vector<PointCloudSample> train_clouds, val_clouds;
        for (std::size_t i = 0; i < order.size(); ++i)
            (i < order.size() - n_val ? train_clouds : val_clouds).push_back(clouds[order[i]]);
        out.train_set = prepare_pointclouds<float>(train_clouds, cfg.model, dseed);
        out.eval_set = n_val ? prepare_pointclouds<float>(val_clouds, cfg.model, dseed + 7777)
                             : out.train_set;
        return out;
    }

    if (cfg.data_kind == "csv_dir") {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(cfg.data_path))
            if (e.path().extension() == ".csv" && e.path().filename() != "manifest.csv")
                files.push_back(e.path().string());
        if (files.empty()) throw IoError("no .csv files under " + cfg.data_path);
        std::sort(files.begin(), files.end());
        std::vector<PointCloudSample> clouds;
        int max_label = 0;
        RngStream block_rng(dseed ^ 0xb10cULL);
        for (std::size_t i = 0; i < files.size(); ++i) {
            PointCloudSample c = load_pointcloud_csv(files[i]);
            if (cfg.data_block) c = block_sample(c, cfg.data_block_size, cfg.data_block_points,
                                                 block_rng.fork(i));
            for (int lab : c.labels) max_label = std::max(max_label, lab);
            clouds.push_back(std::move(c));
        }
        out.input_dim = clouds[0].feature_dim();
        out.num_classes = static_cast<std::size_t>(max_label) + 1;
        out.multilabel = false;
        std::size_t n_val = static_cast<std::size_t>(cfg.data_val_fraction *
                                                     static_cast<double>(clouds.size()));
        std::vector<PointCloudSample> train_clouds(clouds.begin(),
                                                   clouds.end() - static_cast<std::ptrdiff_t>(n_val));
        std::vector<PointCloudSample> val_clouds(clouds.end() - static_cast<std::ptrdiff_t>(n_val),
                                                 clouds.end());
        out.train_set = prepare_pointclouds<float>(train_clouds, cfg.model, dseed);
        out.eval_set = n_val ? prepare_pointclouds<float>(val_clouds, cfg.model, dseed + 7777)
                             : out.train_set;
        return out;
    }

    // nodelink
    auto graphs = load_nodelink_json(cfg.data_path);
    if (graphs.empty()) throw IoError("no graphs in " + cfg.data_path);
    out.input_dim = graphs[0].feat_dim;
    out.num_classes = graphs[0].num_classes;
    out.multilabel = true;
    bool has_val = false;
    for (const auto& g : graphs)
        if (g.split == "val") has_val = true;
    std::size_t idx = 0;
    for (const auto& g : graphs) {
        auto p = prepare_fixed_graph<float>(g, cfg.model, dseed + idx++);
        if (g.split == "train") out.train_set.push_back(std::move(p));
        else if (g.split == "val" || (!has_val && g.split == "test"))
            out.eval_set.push_back(std::move(p));
    }
    if (out.train_set.empty()) throw IoError("nodelink data has no train-split graphs");
    if (out.eval_set.empty()) out.eval_set = out.train_set;
    return out;
}

namespace {

void check_data_matches_model(const RunConfig& cfg, const LoadedData& d) {
    if (d.input_dim != cfg.model.input_dim)
        throw ConfigError("model.input_dim = " + std::to_string(cfg.model.input_dim) +
                          " but dataset features have width " + std::to_string(d.input_dim));
    if (d.num_classes > cfg.model.num_classes)
        throw ConfigError("dataset has " + std::to_string(d.num_classes) +
                          " classes, model.num_classes = " + std::to_string(cfg.model.num_classes));
    if (d.multilabel != cfg.model.multilabel)
        throw ConfigError(d.multilabel ? "dataset is multilabel; set model.multilabel = true"
                                       : "dataset is single-label; set model.multilabel = false");
}

std::string run_header() {
    return std::string("# dgcn ") + kVersion + "\n";
}

}  // namespace

int run_train(RunConfig cfg, const std::string& out_dir, bool force) {
    cfg.finalize();
    ensure_run_dir(out_dir, force);
    LoadedData data = load_dataset(cfg);
    check_data_matches_model(cfg, data);
    write_file(out_dir + "/config.resolved", run_header() + cfg.resolved_text());

    auto model = build_model<float>(cfg.model, cfg.train.seed);
    std::vector<std::vector<float>> best;
    MetricsReport report = train(model, data.train_set, data.eval_set, cfg.train, &best);
    write_file(out_dir + "/metrics.csv", trace_to_csv(report));

    if (!best.empty()) {
        for (std::size_t e = 0; e < model.params().entry_count(); ++e)
            *model.params().entry(e).value = best[e];
    }
    save_checkpoint(model, out_dir + "/checkpoint.dgcn", cfg.train.seed);

    if (report.diverged) {
        std::cout << "status: diverged\n";
        return 3;
    }
    std::cout << "status: ok\n";
    if (cfg.model.multilabel)
        std::cout << "best m-F1: " << fmt(report.micro_f1) << " (epoch " << report.best_epoch
                  << ")\n";
    else
        std::cout << "best mIoU: " << fmt(report.miou) << "  OA: " << fmt(report.oa) << " (epoch "
                  << report.best_epoch << ")\n";
    return 0;
}

int run_eval(const std::string& checkpoint_path, RunConfig cfg, const std::string& out_dir) {
    auto model = load_checkpoint<float>(checkpoint_path);
    cfg.model = model.config();
    cfg.finalize();
    LoadedData data = load_dataset(cfg);
    check_data_matches_model(cfg, data);
    EvalResult<float> ev = evaluate(model, data.eval_set, cfg.train);

    std::string csv = "metric,value\n";
    csv += "loss," + fmt(ev.loss) + "\n";
    if (cfg.model.multilabel) {
        csv += "mf1," + fmt(ev.mf1) + "\noa,-\nmiou,-\n";
        std::cout << "m-F1: " << fmt(ev.mf1) << "\n";
    } else {
        csv += "mf1,-\noa," + fmt(ev.oa) + "\nmiou," + fmt(ev.miou_v) + "\n";
        for (std::size_t c = 0; c < ev.per_class_iou.size(); ++c)
            if (!std::isnan(ev.per_class_iou[c]))
                csv += "iou_class_" + std::to_string(c) + "," + fmt(ev.per_class_iou[c]) + "\n";
        std::cout << "OA: " << fmt(ev.oa) << "  mIoU: " << fmt(ev.miou_v) << "\n";
    }
    if (!out_dir.empty()) {
        ensure_run_dir(out_dir, true);
        write_file(out_dir + "/eval.csv", csv);
    }
    return 0;
}

int run_depth_sweep(RunConfig base, const std::vector<std::size_t>& depths,
                    const std::vector<std::string>& connections, const std::string& out_dir,
                    bool force) {
    base.finalize();
    ensure_run_dir(out_dir, force);
    write_file(out_dir + "/config.resolved", run_header() + base.resolved_text());

    std::string sweep = "connection,depth,epoch,loss,sqrt_loss,diverged\n";
    std::string summary = "connection,depth,final_loss,smoothed_loss,diverged\n";
    for (const std::string& conn : connections) {
        for (std::size_t depth : depths) {
            RunConfig cfg = base;
            cfg.model.connection = parse_connection(conn);
            cfg.model.depth = depth;
            LoadedData data = load_dataset(cfg);
            check_data_matches_model(cfg, data);
            auto model = build_model<float>(cfg.model, cfg.train.seed);
            MetricsReport r = train(model, data.train_set, data.eval_set, cfg.train);
            for (const auto& tr : r.trace)
                sweep += conn + "," + std::to_string(depth) + "," + std::to_string(tr.epoch) + "," +
                         fmt(tr.loss) + "," + fmt(std::sqrt(std::max(0.0, tr.loss))) + "," +
                         (r.diverged ? "1" : "0") + "\n";
            double fin = r.trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : r.trace.back().loss;
            summary += conn + "," + std::to_string(depth) + "," + fmt(fin) + "," +
                       fmt(smoothed_final_loss(r)) + "," + (r.diverged ? "1" : "0") + "\n";
            std::cout << conn << "-" << depth << (r.diverged ? " diverged" : " ok")
                      << " smoothed_loss=" << fmt(smoothed_final_loss(r)) << "\n";
        }
    }
    write_file(out_dir + "/sweep.csv", sweep);
    write_file(out_dir + "/summary.csv", summary);
    return 0;
}

int run_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force) {
    ensure_run_dir(out_dir, force);
    SyntheticOptions opts{cfg.data_min_parts, cfg.data_max_parts, cfg.data_noise};
    auto clouds = gen_synthetic_parts(cfg.data_points, cfg.data_samples,
                                      cfg.effective_data_seed(), opts);
    std::string manifest = "file,points,classes\n";
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04zu.csv", i);
        save_pointcloud_csv(clouds[i], out_dir + "/" + name);
        int maxlab = *std::max_element(clouds[i].labels.begin(), clouds[i].labels.end());
        manifest += std::string(name) + "," + std::to_string(clouds[i].n) + "," +
                    std::to_string(maxlab + 1) + "\n";
    }
    write_file(out_dir + "/manifest.csv", manifest);
    std::cout << "wrote " << clouds.size() << " samples to " << out_dir << "\n";
    return 0;
}

std::vector<BenchRow> bench_operators(const RunConfig& cfg, const std::vector<std::string>& ops) {
    // One shared graph: a synthetic cloud with a static coordinate k-NN
    // table, identical for every operator.
    auto clouds = gen_synthetic_parts(cfg.data_points, 1, cfg.effective_data_seed());
    ModelConfig probe = cfg.model;
    probe.dynamic_knn = false;
    probe.fixed_edges = false;
    auto sample = prepare_pointcloud<float>(clouds[0], probe, cfg.effective_data_seed());

    std::vector<BenchRow> rows;
    for (const std::string& opname : ops) {
        OperatorKind kind = parse_operator(opname);
        ParamStore<float> store;
        std::vector<LayerParams<float>> layers;
        RngStream rng(cfg.train.seed);
        for (std::size_t l = 0; l < cfg.model.depth; ++l)
            layers.push_back(make_layer(store, "bench." + std::to_string(l), kind,
                                        l == 0 ? std::size_t(3) : cfg.model.width, cfg.model.width,
                                        rng.fork(l), cfg.model.mlp_depth));

        Tape<float> tape;
        PassContext<float> ctx{&tape, true, 0.0, RngStream(cfg.train.seed)};
        auto t0 = std::chrono::steady_clock::now();
        Tensor<float> h = sample.features;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Tensor<float> f = operator_forward(Graph<float>(h, sample.edges), layers[l], ctx);
            h = (h.channels() == f.channels()) ? add(f, h) : f;
        }
        Tensor<float> loss = sum_all(h);
        auto t1 = std::chrono::steady_clock::now();
        store.zero_grads();
        tape.backward(loss);
        auto t2 = std::chrono::steady_clock::now();

        BenchRow row;
        row.op = opname;
        row.saved_value_scalars = tape.saved_value_scalars();
        row.saved_aux_scalars = tape.saved_aux_scalars();
        row.saved_total = tape.saved_scalar_count();
        row.tape_bytes = tape.saved_value_scalars() * sizeof(float) +
                         tape.saved_aux_scalars() * sizeof(int);
        row.forward_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.backward_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        row.max_rss_kb = current_max_rss_kb();
        rows.push_back(row);
    }
    return rows;
}

int run_bench(const RunConfig& cfg, const std::vector<std::string>& ops,
              const std::string& out_dir, bool force) {
    auto rows = bench_operators(cfg, ops);
    std::string csv = "operator,saved_scalars,saved_values,saved_aux,tape_bytes,max_rss_kb,"
                      "forward_ms,backward_ms,metric\n";
    for (const auto& r : rows) {
        csv += r.op + "," + std::to_string(r.saved_total) + "," +
               std::to_string(r.saved_value_scalars) + "," + std::to_string(r.saved_aux_scalars) +
               "," + std::to_string(r.tape_bytes) + "," + std::to_string(r.max_rss_kb) + "," +
               fmt(r.forward_ms) + "," + fmt(r.backward_ms) + ",-\n";
        std::cout << r.op << ": saved=" << r.saved_total << " scalars, fwd=" << fmt(r.forward_ms)
                  << "ms, bwd=" << fmt(r.backward_ms) << "ms\n";
    }
    if (!out_dir.empty()) {
        ensure_run_dir(out_dir, force);
        write_file(out_dir + "/bench.csv", csv);
    }
    return 0;
}

}  // namespace dgcn
