// Command line front end: dataset synthesis, training, evaluation,
// inference, gradient verification and a micro-benchmark. Exit codes:
// 0 success, 1 invalid arguments or configuration, 2 unreadable or
// malformed files.
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssc/gradcheck_suite.hpp"
#include "ssc/model.hpp"
#include "ssc/train.hpp"

namespace fs = std::filesystem;
using namespace ssc;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::vector<Sample> load_dataset(const std::string& dir) {
    std::vector<Sample> samples;
    for (const auto& scene : list_scene_dirs(dir)) samples.push_back(read_sample(scene));
    if (samples.empty()) throw std::invalid_argument("no scenes found under " + dir);
    return samples;
}

SceneSpec named_spec(const std::string& name) {
    if (name == "desk") return SceneSpec::desk_working();
    if (name == "full") return SceneSpec::full_working();
    throw std::invalid_argument("unknown volume preset '" + name + "' (use desk or full)");
}

ModelConfig config_from_args(const std::string& path, const std::vector<std::string>& sets) {
    ModelConfig cfg = parse_config_text(read_text_file(path));
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_config_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

struct LoadedModel {
    Checkpoint<float> cp;
    SceneCompletionNet<float> net;
    explicit LoadedModel(const std::string& path)
        : cp(read_checkpoint<float>(path)), net(cp.cfg) {
        load_parameters(net, cp);
    }
};

int cmd_synth(uint64_t seed, int64_t count, const std::string& spec_name, const std::string& out,
              int64_t frames, int64_t difficulty, double noise, double invalid_prob) {
    SynthParams params;
    params.n_t = frames;
    params.difficulty = difficulty;
    params.noise_sigma = noise;
    params.invalid_prob = invalid_prob;
    auto samples = make_dataset(seed, count, named_spec(spec_name), params);
    fs::create_directories(out);
    for (const auto& s : samples) write_sample(out, s);
    std::cout << "wrote " << samples.size() << " scenes to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::vector<std::string>& sets,
              int64_t log_every) {
    ModelConfig cfg = config_from_args(config_path, sets);
    auto data = load_dataset(data_dir);
    SceneCompletionNet<float> net(cfg);
    Trainer<float> trainer(net);
    trainer.run(data, &std::cout, log_every);

    auto result = evaluate_model(net, data);
    std::cout << "train-set metrics\n"
              << format_metric_report(result.full, default_class_names(cfg.c_class));

    if (!fs::path(out_path).parent_path().empty())
        fs::create_directories(fs::path(out_path).parent_path());
    write_checkpoint(out_path, trainer.make_checkpoint());
    std::cout << "checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::vector<double>& ranges) {
    LoadedModel lm(ckpt);
    auto data = load_dataset(data_dir);
    auto result = evaluate_model(lm.net, data, ranges);
    auto names = default_class_names(lm.net.cfg.c_class);
    std::cout << format_metric_report(result.full, names);
    if (!result.ranges.empty()) std::cout << format_range_reports(result.ranges, names);
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& sample_dir, const std::string& out) {
    LoadedModel lm(ckpt);
    Sample sample = read_sample(sample_dir);
    auto pred = infer_model(lm.net, sample);
    if (!fs::path(out).parent_path().empty())
        fs::create_directories(fs::path(out).parent_path());
    write_vgrid(out, pred);
    std::cout << "prediction written to " << out << "\n";
    return 0;
}

int cmd_gradcheck(double tol) {
    auto reports = run_gradcheck_cases(build_gradcheck_suite(1), tol);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.name << " max_rel_err "
                  << r.max_rel_err << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return all_pass ? 0 : 1;
}

int cmd_bench(const std::string& ckpt) {
    LoadedModel lm(ckpt);
    const ModelConfig& cfg = lm.net.cfg;
    SynthParams params;
    params.n_t = cfg.n_t;
    params.noise_sigma = 0.0;
    auto data = make_dataset(1, 1, cfg.working, params);

    int64_t n_params = 0;
    for (const auto& [name, t] : lm.net.params.entries()) n_params += t->numel();
    std::cout << "parameters " << n_params << "\n";

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    auto t0 = clock::now();
    int reps = 3;
    for (int i = 0; i < reps; ++i) (void)lm.net.forward(data[0], ForwardMode::Infer);
    std::cout << "inference_ms " << ms_since(t0) / reps << "\n";

    t0 = clock::now();
    for (int i = 0; i < reps; ++i) {
        auto fwd = lm.net.forward(data[0], ForwardMode::Train);
        auto losses = compute_losses(fwd, make_targets(data[0]), cfg);
        for (auto& [name, t] : lm.net.params.entries()) t->zero_grad();
        backward(losses.total);
    }
    std::cout << "train_step_ms " << ms_since(t0) / reps << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense-sparse-dense semantic scene completion"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    uint64_t seed = 1;
    int64_t count = 4, frames = 2, difficulty = 2;
    double noise = 0.0, invalid_prob = 1.0;
    std::string spec_name = "desk", out_dir;
    synth->add_option("--seed", seed, "dataset seed");
    synth->add_option("--count", count, "number of scenes")->check(CLI::PositiveNumber);
    synth->add_option("--spec", spec_name, "volume preset: desk or full");
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_option("--frames", frames, "camera frames per scene")->check(CLI::PositiveNumber);
    synth->add_option("--difficulty", difficulty, "objects per scene")
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--noise", noise, "depth noise sigma in voxels");
    synth->add_option("--invalid-prob", invalid_prob, "chance an unobserved voxel is masked")
        ->check(CLI::Range(0.0, 1.0));

    auto* train = app.add_subcommand("train", "train a model");
    std::string config_path, data_dir, ckpt_out;
    std::vector<std::string> sets;
    int64_t log_every = 10;
    train->add_option("--config", config_path, "key=value config file")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", ckpt_out, "checkpoint output path")->required();
    train->add_option("--set", sets, "override a config key (key=value, repeatable)");
    train->add_option("--log-every", log_every, "steps between log lines")
        ->check(CLI::PositiveNumber);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data;
    std::vector<double> ranges;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--ranges", ranges, "forward-axis crops in meters")->delimiter(',');

    auto* infer = app.add_subcommand("infer", "predict labels for one scene");
    std::string infer_ckpt, sample_dir, out_vgrid;
    infer->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
    infer->add_option("--sample", sample_dir, "scene directory")->required();
    infer->add_option("--out-vgrid", out_vgrid, "output voxel grid path")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "verify gradients by finite differences");
    double tol = 1e-4;
    gradcheck->add_option("--tol", tol, "max relative error")->check(CLI::PositiveNumber);

    auto* bench = app.add_subcommand("bench", "time one inference and one training step");
    std::string bench_ckpt;
    bench->add_option("--ckpt", bench_ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(seed, count, spec_name, out_dir, frames, difficulty, noise,
                             invalid_prob);
        if (train->parsed()) return cmd_train(config_path, data_dir, ckpt_out, sets, log_every);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, ranges);
        if (infer->parsed()) return cmd_infer(infer_ckpt, sample_dir, out_vgrid);
        if (gradcheck->parsed()) return cmd_gradcheck(tol);
        if (bench->parsed()) return cmd_bench(bench_ckpt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
