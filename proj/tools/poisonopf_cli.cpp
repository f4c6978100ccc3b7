// poisonopf command line: case inspection, dataset generation, poisoning,
// training, evaluation, the full clean-vs-poisoned pipeline and sweeps.
//
// Settings come from built-in defaults, then --config, then POISONOPF_THREADS,
// then flags; later sources win. Exit codes: 0 success, 2 invalid config or
// input, 3 missing upstream artifact, 4 numerical failure.

#include "poisonopf/attack.hpp"
#include "poisonopf/config.hpp"
#include "poisonopf/dcopf.hpp"
#include "poisonopf/experiment.hpp"
#include "poisonopf/proxies.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace poisonopf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumerical = 4;

// Flag values; empty optionals leave the config untouched.
struct Flags {
    std::string config;
    std::string case_path;
    std::string format;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> samples;
    std::optional<double> bound;
    std::optional<double> delta;
    std::optional<int> iterations;
    std::string method;
    std::optional<int> threads;
    std::optional<int> epochs;
    bool no_timing = false;
    bool quiet = false;

    std::string data;
    std::string test_data;
    std::vector<std::string> models;
    std::string condition = "clean";
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "experiment config (JSON)");
    cmd->add_option("--case", f.case_path, "case file (.m MATPOWER or .json native)");
    cmd->add_option("--format", f.format, "case format")->check(CLI::IsMember({"matpower", "native", "auto"}));
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--seed", f.seed, "dataset seed");
    cmd->add_option("--samples", f.samples, "training samples");
    cmd->add_option("--bound", f.bound, "attack clip bound L");
    cmd->add_option("--delta", f.delta, "attack step size in pu (default: the saturating step L * max load)");
    cmd->add_option("--iterations", f.iterations, "attack iterations");
    cmd->add_option("--method", f.method, "proxy method")->check(CLI::IsMember({"penalty", "dc3", "loop-lc", "all"}));
    cmd->add_option("--threads", f.threads, "worker threads (default 1, or POISONOPF_THREADS)");
    cmd->add_option("--epochs", f.epochs, "training epochs for every proxy");
    cmd->add_flag("--no-timing", f.no_timing, "write zeros in timing columns (byte-reproducible reports)");
    cmd->add_flag("--quiet", f.quiet, "no progress output");
}

ExperimentConfig resolve_config(const Flags& f) {
    ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
    if (std::getenv("POISONOPF_THREADS")) c.threads = threads_from_env();
    if (!f.case_path.empty()) c.case_path = f.case_path;
    if (!f.format.empty()) c.case_format = f.format;
    if (!f.out.empty()) c.output_dir = f.out;
    if (f.seed) c.seed = *f.seed;
    if (f.samples) c.samples = *f.samples;
    if (f.bound) c.attack.bound = *f.bound;
    if (f.delta) c.attack.step = *f.delta;
    if (f.iterations) c.attack.iterations = *f.iterations;
    if (f.threads) c.threads = *f.threads;
    if (f.epochs)
        for (auto& p : c.proxies) p.epochs = *f.epochs;
    if (!f.method.empty() && f.method != "all") c.methods = {proxy::kind_from_string(f.method)};
    if (!f.method.empty() && f.method == "all") c.methods = {proxy::kAllKinds[0], proxy::kAllKinds[1], proxy::kAllKinds[2]};
    if (f.no_timing) c.timing = false;
    c.check();
    return c;
}

std::string out_file(const ExperimentConfig& c, const std::string& name) { return (fs::path(c.output_dir) / name).string(); }

std::string file_hash(const std::string& path) { return fingerprint(read_file(path)); }

void write_manifest(const std::string& command, const ExperimentConfig& c, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    std::vector<std::pair<std::string, std::string>> in;
    for (const auto& p : inputs) in.emplace_back(p, file_hash(p));
    nlohmann::json m = experiment::run_manifest(command, c, in, outputs);
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& p : outputs) hashes[p] = file_hash(p);
    m["output_hashes"] = hashes;
    write_file(out_file(c, command + ".manifest.json"), m.dump(2) + "\n");
}

experiment::Progress progress_printer(const Flags& f) {
    if (f.quiet) return {};
    return [](const std::string& s) { std::cerr << "[poisonopf] " << s << "\n"; };
}

std::string require_input(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw IoError(what + " not found: " + path + " (run the upstream command first)");
    return path;
}

// --- commands ----------------------------------------------------------------------

int cmd_case_info(const std::string& path, const Flags& f) {
    const grid::Network net = load_network(path, f.format.empty() ? "auto" : f.format);
    const opf::DispatchModel model(net);
    const auto sol = opf::solve_dcopf(net, net.nominal_loads());
    std::size_t limited = 0;
    for (const auto& l : net.lines) limited += l.flow_limit.has_value();
    std::printf("case:        %s\n", path.c_str());
    std::printf("fingerprint: %s\n", grid::network_fingerprint(net).c_str());
    std::printf("base MVA:    %g\n", net.base_power);
    std::printf("buses:       %zu (slack bus index %zu)\n", net.bus_count(), net.slack_bus);
    std::printf("lines:       %zu (%zu with flow limits)\n", net.line_count(), limited);
    std::printf("generators:  %zu (capacity %.6g MW)\n", net.generator_count(),
                [&] {
                    double s = 0;
                    for (const auto& g : net.generators) s += g.p_max;
                    return s * net.base_power;
                }());
    std::printf("total load:  %.6g MW\n", net.nominal_loads().sum() * net.base_power);
    std::printf("oracle cost: %.10g\n", sol.cost);
    std::printf("dispatch:   ");
    for (Eigen::Index i = 0; i < sol.generation.size(); ++i) std::printf(" %.6g", sol.generation[i]);
    std::printf(" pu\n");
    return kExitOk;
}

int cmd_gen_data(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const opf::DispatchModel model(c.network());
    const auto [train, test] = experiment::make_datasets(c, model);
    const std::string tr = out_file(c, "dataset_train.jsonl"), te = out_file(c, "dataset_test.jsonl");
    experiment::save_dataset(train, tr);
    experiment::save_dataset(test, te);
    write_manifest("gen-data", c, {c.case_path}, {tr, te});
    std::printf("wrote %s (%td samples) and %s (%td samples)\n", tr.c_str(), static_cast<std::ptrdiff_t>(train.size()),
                te.c_str(), static_cast<std::ptrdiff_t>(test.size()));
    return kExitOk;
}

int cmd_poison(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const opf::DispatchModel model(c.network());
    const std::string in = require_input(f.data.empty() ? out_file(c, "dataset_train.jsonl") : f.data, "clean dataset");
    const experiment::Dataset clean = experiment::load_dataset(in, model);
    const auto p = experiment::poison_dataset(clean, c.attack, c.threads);
    const std::string path = out_file(c, "dataset_poisoned.jsonl");
    const std::string prov = experiment::provenance_path(path);
    const std::string sur = out_file(c, "surrogate.bin");
    experiment::save_dataset(p.data, path);
    write_file(prov, experiment::poison_provenance(c.attack, p.surrogate, clean, p.diagnostics).dump(2) + "\n");
    nn::save_model(p.surrogate, sur);
    write_manifest("poison", c, {c.case_path, in}, {path, prov, sur});
    std::printf("wrote %s (step %.6g pu, surrogate loss %.6g -> %.6g, saturated %.3f, max relative perturbation %.6g)\n",
                path.c_str(), p.diagnostics.step, p.diagnostics.clean_loss, p.diagnostics.poisoned_loss, p.diagnostics.saturated_fraction,
                p.diagnostics.max_relative_perturbation);
    return kExitOk;
}

int cmd_train(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const opf::DispatchModel model(c.network());
    const std::string in = require_input(f.data.empty() ? out_file(c, "dataset_train.jsonl") : f.data, "training dataset");
    const experiment::Dataset ds = experiment::load_dataset(in, model);
    const auto progress = progress_printer(f);
    std::vector<std::string> outputs;
    for (auto kind : c.methods) {
        if (progress) progress(std::string("training ") + proxy::to_string(kind));
        proxy::ProxyConfig pc = c.proxy(kind);
        // a poisoned file can contain loads with an empty feasible polytope
        if (kind == proxy::ProxyKind::loop_lc && fs::exists(experiment::provenance_path(in))) pc.skip_empty_polytopes = true;
        const auto t = proxy::train(model, kind, ds.loads(), ds.labels(), pc, c.threads);
        const std::string path = out_file(c, std::string("models/") + proxy::to_string(kind) + ".bin");
        fs::create_directories(fs::path(path).parent_path());
        proxy::save_proxy(t.model, path);
        outputs.push_back(path);
        outputs.push_back(path + ".json");
        std::printf("%s: final loss %.6g, %zu samples skipped, %.2fs -> %s\n", proxy::to_string(kind), t.report.final_loss,
                    t.report.skipped_samples, c.timing ? t.report.seconds : 0.0, path.c_str());
    }
    write_manifest("train", c, {c.case_path, in}, outputs);
    return kExitOk;
}

int cmd_eval(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const grid::Network net = c.network();
    const opf::DispatchModel model(net);
    const std::string in = require_input(f.test_data.empty() ? out_file(c, "dataset_test.jsonl") : f.test_data, "test dataset");
    const experiment::Dataset test = experiment::load_dataset(in, model);
    std::vector<std::string> models = f.models;
    if (models.empty())
        for (auto kind : c.methods) models.push_back(out_file(c, std::string("models/") + proxy::to_string(kind) + ".bin"));
    experiment::Report report;
    std::vector<std::string> inputs{c.case_path, in};
    for (const auto& path : models) {
        require_input(path, "model");
        const proxy::ProxyModel pm = proxy::load_proxy(path, net);
        const auto e = experiment::evaluate(pm, model, test, c.threads);
        report.rows.push_back({proxy::to_string(pm.kind), f.condition, e.optimality_gap, e.feasibility.mean_pu,
                               e.feasibility.mean_mw, c.timing ? e.inference_seconds : 0.0, 0.0});
        report.aux.push_back({proxy::to_string(pm.kind), f.condition, e.output_mse, e.feasibility.max_pu, 0.0, 0});
        inputs.push_back(path);
    }
    const std::string csv = out_file(c, "eval.csv"), aux = out_file(c, "eval_aux.csv");
    write_file(csv, experiment::report_csv(report));
    write_file(aux, experiment::aux_csv(report));
    write_manifest("eval", c, inputs, {csv, aux});
    std::cout << experiment::report_csv(report);
    return kExitOk;
}

int cmd_pipeline(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const auto res = experiment::run_pipeline(c, c.output_dir, progress_printer(f));
    std::vector<std::string> outputs;
    for (const char* name : {"report.csv", "report_aux.csv", "dataset_train.jsonl", "dataset_test.jsonl",
                             "dataset_poisoned.jsonl", "dataset_poisoned.jsonl.provenance.json", "surrogate.bin"})
        outputs.push_back(out_file(c, name));
    for (auto kind : c.methods)
        for (const char* cond : {"clean", "poisoned"}) outputs.push_back(experiment::model_file(c.output_dir, kind, cond));
    write_manifest("pipeline", c, {c.case_path}, outputs);
    std::cout << experiment::report_csv(res.report);
    return kExitOk;
}

int cmd_sweep(const Flags& f) {
    const ExperimentConfig c = resolve_config(f);
    const auto s = experiment::sweep_perturbation(c, progress_printer(f));
    const std::string csv = out_file(c, "sweep.csv"), svg = out_file(c, "sweep.svg");
    write_file(csv, experiment::sweep_csv(s));
    write_file(svg, experiment::sweep_svg(s));
    write_manifest("sweep", c, {c.case_path}, {csv, svg});
    std::printf("saturation threshold %.10g pu\n", s.saturation_threshold);
    std::cout << experiment::sweep_csv(s);
    return kExitOk;
}

int exit_code_for(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const experiment::StageError& s) {
        return exit_code_for(s.cause());
    } catch (const IoError&) {
        return kExitMissing;
    } catch (const NumericalError&) {
        return kExitNumerical;
    } catch (const opf::InfeasibleError&) {
        return kExitNumerical;
    } catch (const Error&) {
        return kExitConfig;
    } catch (const nlohmann::json::exception&) {
        return kExitConfig;
    } catch (...) {
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural DC-OPF proxies under training-data poisoning"};
    app.require_subcommand(1);
    Flags f;
    std::string case_file;

    auto* info = app.add_subcommand("case-info", "parse a case and print its size and nominal oracle cost");
    info->add_option("file", case_file, "case file")->required();
    info->add_option("--format", f.format, "case format")->check(CLI::IsMember({"matpower", "native", "auto"}));

    auto* gen = app.add_subcommand("gen-data", "generate oracle-labelled training and held-out test datasets");
    auto* poison = app.add_subcommand("poison", "poison a training dataset with the surrogate-gradient attack");
    auto* train = app.add_subcommand("train", "train proxies on a dataset");
    auto* eval = app.add_subcommand("eval", "evaluate trained proxies on a test dataset");
    auto* pipe = app.add_subcommand("pipeline", "clean vs poisoned comparison for all methods");
    auto* sweep = app.add_subcommand("sweep", "metrics versus attack step size");
    for (auto* cmd : {gen, poison, train, eval, pipe, sweep}) add_common(cmd, f);
    for (auto* cmd : {poison, train}) cmd->add_option("--data", f.data, "input dataset (default <out>/dataset_train.jsonl)");
    eval->add_option("--test-data", f.test_data, "test dataset (default <out>/dataset_test.jsonl)");
    eval->add_option("--model", f.models, "model file(s) (default <out>/models/<method>.bin)");
    eval->add_option("--condition", f.condition, "condition label for the report rows");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*info) return cmd_case_info(case_file, f);
        if (*gen) return cmd_gen_data(f);
        if (*poison) return cmd_poison(f);
        if (*train) return cmd_train(f);
        if (*eval) return cmd_eval(f);
        if (*pipe) return cmd_pipeline(f);
        if (*sweep) return cmd_sweep(f);
    } catch (const std::exception& e) {
        std::cerr << "poisonopf: error: " << e.what() << "\n";
        return exit_code_for(std::current_exception());
    }
    return kExitOk;
}
