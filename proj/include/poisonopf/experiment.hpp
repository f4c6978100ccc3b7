#pragma once

// Datasets labelled by the oracle, gap metrics, the clean-vs-poisoned
// pipeline, perturbation sweeps and their CSV / SVG renderings.

#include "poisonopf/attack.hpp"
#include "poisonopf/common.hpp"
#include "poisonopf/config.hpp"
#include "poisonopf/dcopf.hpp"
#include "poisonopf/native_case.hpp"
#include "poisonopf/proxies.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace poisonopf::experiment {

// --- datasets ------------------------------------------------------------------

struct Sample {
    Vector loads;             // pu
    Vector label_generation;  // pu, oracle
    double label_cost = 0.0;
    Vector label_reduced;
};

struct Dataset {
    std::string network_fingerprint;
    std::uint64_t seed = 0;
    std::array<double, 2> scaling_range{1.0, 1.0};
    std::vector<Sample> samples;

    Eigen::Index size() const { return static_cast<Eigen::Index>(samples.size()); }

    Matrix loads() const {
        if (samples.empty()) return {};
        Matrix m(samples[0].loads.size(), size());
        for (Eigen::Index j = 0; j < size(); ++j) m.col(j) = samples[static_cast<std::size_t>(j)].loads;
        return m;
    }

    Matrix labels() const {
        if (samples.empty()) return {};
        Matrix m(samples[0].label_generation.size(), size());
        for (Eigen::Index j = 0; j < size(); ++j) m.col(j) = samples[static_cast<std::size_t>(j)].label_generation;
        return m;
    }
};

inline bool bitwise_equal(const Dataset& a, const Dataset& b) {
    if (a.network_fingerprint != b.network_fingerprint || a.seed != b.seed || a.scaling_range != b.scaling_range ||
        a.samples.size() != b.samples.size())
        return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto &x = a.samples[i], &y = b.samples[i];
        if (!poisonopf::bitwise_equal(x.loads, y.loads) || !poisonopf::bitwise_equal(x.label_generation, y.label_generation) ||
            std::memcmp(&x.label_cost, &y.label_cost, sizeof(double)) != 0)
            return false;
    }
    return true;
}

inline constexpr int kRejectionFactor = 100;

/// n samples, each nominal load scaled by an independent uniform draw in
/// [lo, hi]; draws the oracle rejects as infeasible are replaced. Candidates are
/// drawn in a fixed sequence and accepted in order, so the result does not
/// depend on the thread count.
inline Dataset generate_dataset(const opf::DispatchModel& model, int n, std::array<double, 2> range, std::uint64_t seed,
                                int threads = 1) {
    if (n < 1) throw ValidationError("dataset size must be >= 1");
    if (!(range[0] > 0.0 && range[0] <= range[1])) throw ValidationError("scaling range must satisfy 0 < lo <= hi");
    const grid::Network& net = model.network();
    const Vector nominal = net.nominal_loads();
    Dataset ds;
    ds.network_fingerprint = grid::network_fingerprint(net);
    ds.seed = seed;
    ds.scaling_range = range;
    ds.samples.reserve(static_cast<std::size_t>(n));

    Rng rng(seed);
    const long cap = static_cast<long>(kRejectionFactor) * n;
    long attempts = 0;
    while (ds.samples.size() < static_cast<std::size_t>(n)) {
        const std::size_t want = static_cast<std::size_t>(n) - ds.samples.size();
        const std::size_t batch = static_cast<std::size_t>(std::min<long>(static_cast<long>(want), cap - attempts));
        if (batch == 0)
            throw ValidationError("dataset generation rejected " + std::to_string(attempts) +
                                  " draws; scaling range too aggressive for this case");
        std::vector<Vector> candidates(batch);
        for (auto& d : candidates) {
            d = nominal;
            for (Eigen::Index k = 0; k < d.size(); ++k) d[k] *= uniform(rng, range[0], range[1]);
        }
        attempts += static_cast<long>(batch);
        std::vector<std::optional<opf::DispatchSolution>> solved(batch);
        parallel_for(batch, threads, [&](std::size_t i) {
            try {
                solved[i] = opf::solve_dcopf(net, candidates[i]);
            } catch (const opf::InfeasibleError&) {
            }
        });
        for (std::size_t i = 0; i < batch; ++i) {
            if (!solved[i]) continue;
            Sample s;
            s.loads = candidates[i];
            s.label_generation = solved[i]->generation;
            s.label_cost = solved[i]->cost;
            s.label_reduced = model.reduced_from_generation(s.label_generation);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

/// Copy of `ds` with the load vectors replaced; labels are kept.
inline Dataset with_loads(const Dataset& ds, const Matrix& loads) {
    if (loads.cols() != ds.size()) throw DimensionError("replacement loads have the wrong sample count");
    Dataset out = ds;
    for (Eigen::Index j = 0; j < ds.size(); ++j) out.samples[static_cast<std::size_t>(j)].loads = loads.col(j);
    return out;
}

// Line-delimited JSON: one header record, then one record per sample.

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out = nlohmann::json{{"network_fingerprint", ds.network_fingerprint},
                                     {"seed", ds.seed},
                                     {"scaling_range", ds.scaling_range},
                                     {"count", ds.samples.size()}}
                          .dump();
    out += '\n';
    for (const auto& s : ds.samples) {
        out += nlohmann::json{{"loads", to_std(s.loads)},
                              {"label_generation", to_std(s.label_generation)},
                              {"label_cost", s.label_cost}}
                   .dump();
        out += '\n';
    }
    return out;
}

/// Parses a dataset file and checks it belongs to `model`'s network.
inline Dataset parse_dataset(std::string_view text, const opf::DispatchModel& model) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    auto next = [&]() -> std::optional<nlohmann::json> {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                return nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(std::string("dataset record: ") + e.what(), line_no);
            }
        }
        return std::nullopt;
    };
    const auto header = next();
    if (!header) throw ParseError("dataset file is empty");
    Dataset ds;
    std::size_t count = 0;
    try {
        ds.network_fingerprint = header->at("network_fingerprint").get<std::string>();
        ds.seed = header->at("seed").get<std::uint64_t>();
        ds.scaling_range = header->at("scaling_range").get<std::array<double, 2>>();
        count = header->at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset header: ") + e.what(), 1);
    }
    if (ds.network_fingerprint != grid::network_fingerprint(model.network()))
        throw ValidationError("dataset was generated for a different network (fingerprint " + ds.network_fingerprint + ")");
    while (const auto rec = next()) {
        Sample s;
        try {
            s.loads = from_std(rec->at("loads").get<std::vector<double>>());
            s.label_generation = from_std(rec->at("label_generation").get<std::vector<double>>());
            s.label_cost = rec->at("label_cost").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("dataset record: ") + e.what(), line_no);
        }
        if (s.loads.size() != model.bus_count() || s.label_generation.size() != model.generator_count())
            throw ParseError("dataset record has the wrong dimensions", line_no);
        s.label_reduced = model.reduced_from_generation(s.label_generation);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.size() != count)
        throw ParseError("dataset header announces " + std::to_string(count) + " samples, file has " +
                         std::to_string(ds.samples.size()));
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, serialize_dataset(ds)); }

inline Dataset load_dataset(const std::string& path, const opf::DispatchModel& model) {
    return parse_dataset(read_file(path), model);
}

inline std::string dataset_hash(const Dataset& ds) { return fingerprint(serialize_dataset(ds)); }

inline std::string provenance_path(const std::string& dataset_path) { return dataset_path + ".provenance.json"; }

inline nlohmann::json poison_provenance(const attack::AttackConfig& cfg, const nn::MlpModel& surrogate,
                                        const Dataset& clean, const attack::PoisonDiagnostics& d) {
    return {{"attack", cfg},
            {"surrogate_fingerprint", attack::surrogate_fingerprint(surrogate)},
            {"clean_dataset_hash", dataset_hash(clean)},
            {"diagnostics",
             {{"clean_loss", d.clean_loss},
              {"poisoned_loss", d.poisoned_loss},
              {"saturated_fraction", d.saturated_fraction},
              {"max_relative_perturbation", d.max_relative_perturbation},
              {"step", d.step}}}};
}

// --- metrics -------------------------------------------------------------------

/// Mean |C(pred) - C*| / |C*| over samples; infeasible predictions are costed
/// by the polynomial as they stand.
inline double optimality_gap(const grid::Network& net, const std::vector<Vector>& predictions, const Dataset& ds) {
    if (predictions.size() != ds.samples.size()) throw DimensionError("one prediction per sample expected");
    if (predictions.empty()) throw ValidationError("optimality gap of an empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double c = ds.samples[i].label_cost;
        if (c == 0.0) throw ValidationError("sample " + std::to_string(i) + " has zero optimal cost");
        total += std::abs(net.total_cost(predictions[i]) - c) / std::abs(c);
    }
    return total / static_cast<double>(predictions.size());
}

struct FeasibilityGap {
    double mean_pu = 0.0;
    double mean_mw = 0.0;
    double max_pu = 0.0;
};

/// Mean Euclidean distance from each prediction to its feasible set.
inline FeasibilityGap feasibility_gap(const opf::DispatchModel& model, const std::vector<Vector>& predictions,
                                      const Dataset& ds, int threads = 1) {
    if (predictions.size() != ds.samples.size()) throw DimensionError("one prediction per sample expected");
    if (predictions.empty()) throw ValidationError("feasibility gap of an empty dataset");
    std::vector<double> dist(predictions.size());
    parallel_for(predictions.size(), threads, [&](std::size_t i) {
        dist[i] = opf::project_dispatch(model, ds.samples[i].loads, predictions[i]).distance;
    });
    FeasibilityGap g;
    for (double d : dist) {
        g.mean_pu += d;
        g.max_pu = std::max(g.max_pu, d);
    }
    g.mean_pu /= static_cast<double>(dist.size());
    g.mean_mw = g.mean_pu * model.network().base_power;
    return g;
}

/// Mean over samples of ||pred - label||^2 / n_g (auxiliary output-space error).
inline double output_mse(const std::vector<Vector>& predictions, const Dataset& ds) {
    if (predictions.size() != ds.samples.size() || predictions.empty()) throw DimensionError("one prediction per sample expected");
    double total = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        total += (predictions[i] - ds.samples[i].label_generation).squaredNorm() /
                 static_cast<double>(predictions[i].size());
    return total / static_cast<double>(predictions.size());
}

struct Evaluation {
    double optimality_gap = 0.0;
    FeasibilityGap feasibility;
    double output_mse = 0.0;
    double inference_seconds = 0.0;  // mean per sample
};

inline Evaluation evaluate(const proxy::ProxyModel& pm, const opf::DispatchModel& model, const Dataset& test,
                           int threads = 1) {
    std::vector<Vector> pred(test.samples.size());
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = proxy::predict_generation(pm, model, test.samples[i].loads);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Evaluation e;
    e.optimality_gap = optimality_gap(model.network(), pred, test);
    e.feasibility = feasibility_gap(model, pred, test, threads);
    e.output_mse = output_mse(pred, test);
    e.inference_seconds = seconds / static_cast<double>(pred.size());
    return e;
}

// --- reports -------------------------------------------------------------------

struct ReportRow {
    std::string method;
    std::string condition;  // clean | poisoned
    double opt_gap = 0.0;
    double feas_gap_pu = 0.0;
    double feas_gap_mw = 0.0;
    double infer_s = 0.0;
    double train_s = 0.0;

    bool operator==(const ReportRow&) const = default;
};

struct AuxRow {
    std::string method;
    std::string condition;
    double output_mse = 0.0;
    double max_feas_gap_pu = 0.0;
    double final_train_loss = 0.0;
    std::size_t skipped_samples = 0;

    bool operator==(const AuxRow&) const = default;
};

struct Report {
    std::vector<ReportRow> rows;
    std::vector<AuxRow> aux;

    const ReportRow& row(const std::string& method, const std::string& condition) const {
        for (const auto& r : rows)
            if (r.method == method && r.condition == condition) return r;
        throw ValidationError("report has no row " + method + "/" + condition);
    }
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, int line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + std::string(s) + "'", line);
    return v;
}

inline constexpr const char* kReportHeader = "method,condition,opt_gap,feas_gap_pu,feas_gap_mw,infer_s,train_s";
inline constexpr const char* kAuxHeader = "method,condition,output_mse,max_feas_gap_pu,final_train_loss,skipped_samples";

inline std::string report_csv(const Report& r) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& row : r.rows) {
        out += row.method + "," + row.condition + "," + format_double(row.opt_gap) + "," + format_double(row.feas_gap_pu) +
               "," + format_double(row.feas_gap_mw) + "," + format_double(row.infer_s) + "," + format_double(row.train_s) + "\n";
    }
    return out;
}

inline std::string aux_csv(const Report& r) {
    std::string out = std::string(kAuxHeader) + "\n";
    for (const auto& a : r.aux) {
        out += a.method + "," + a.condition + "," + format_double(a.output_mse) + "," + format_double(a.max_feas_gap_pu) + "," +
               format_double(a.final_train_loss) + "," + std::to_string(a.skipped_samples) + "\n";
    }
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Inverse of report_csv.
inline Report parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) throw ParseError("report header mismatch", 1);
    Report r;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c = split_csv_line(line);
        if (c.size() != 7) throw ParseError("expected 7 columns", line_no);
        r.rows.push_back({c[0], c[1], parse_double(c[2], line_no), parse_double(c[3], line_no), parse_double(c[4], line_no),
                          parse_double(c[5], line_no), parse_double(c[6], line_no)});
    }
    return r;
}

// --- pipeline --------------------------------------------------------------------

/// A pipeline stage failed; `cause` keeps the original exception for callers
/// that classify failures.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what, std::exception_ptr cause)
        : Error("stage " + stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::exception_ptr& cause() const noexcept { return cause_; }

private:
    std::string stage_;
    std::exception_ptr cause_;
};

template <class F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what(), std::current_exception());
    }
}

using Progress = std::function<void(const std::string&)>;

struct PipelineResult {
    Report report;
    Dataset train;
    Dataset test;
    Dataset poisoned;
    attack::PoisonDiagnostics diagnostics;
    double saturation_threshold = 0.0;
};

inline std::string model_file(const std::string& dir, proxy::ProxyKind k, const std::string& condition) {
    return (std::filesystem::path(dir) / "models" / (std::string(proxy::to_string(k)) + "_" + condition + ".bin")).string();
}

/// Clean and test datasets for a config: generated from the seeds, checked for overlap.
inline std::pair<Dataset, Dataset> make_datasets(const ExperimentConfig& cfg, const opf::DispatchModel& model) {
    Dataset train = run_stage("gen-data", [&] {
        return generate_dataset(model, cfg.samples, cfg.scaling_range, cfg.seed, cfg.threads);
    });
    Dataset test = run_stage("gen-test", [&] {
        Dataset t = generate_dataset(model, cfg.effective_test_samples(), cfg.scaling_range, cfg.effective_test_seed(), cfg.threads);
        for (const auto& a : t.samples)
            for (const auto& b : train.samples)
                if (poisonopf::bitwise_equal(a.loads, b.loads)) throw ValidationError("a test sample duplicates a training sample");
        return t;
    });
    return {std::move(train), std::move(test)};
}

struct Poisoned {
    Dataset data;
    nn::MlpModel surrogate;
    attack::PoisonDiagnostics diagnostics;
};

inline Poisoned poison_dataset(const Dataset& clean, const attack::AttackConfig& acfg, int threads = 1,
                               const nn::MlpModel* surrogate = nullptr) {
    Poisoned p;
    const Matrix loads = clean.loads(), labels = clean.labels();
    p.surrogate = surrogate ? *surrogate : attack::train_surrogate(loads, labels, acfg);
    attack::PoisonResult r = attack::poison_inputs(loads, labels, p.surrogate, acfg, threads);
    p.data = with_loads(clean, r.loads);
    p.diagnostics = r.diagnostics;
    return p;
}

/// Trains one proxy on `train` and evaluates it on `test`. LOOP-LC drops
/// poisoned samples whose polytope has no interior.
inline std::pair<proxy::Trained, Evaluation> train_and_evaluate(const ExperimentConfig& cfg, const opf::DispatchModel& model,
                                                                proxy::ProxyKind kind, const Dataset& train,
                                                                const Dataset& test, bool poisoned) {
    proxy::ProxyConfig pc = cfg.proxy(kind);
    if (poisoned && kind == proxy::ProxyKind::loop_lc) pc.skip_empty_polytopes = true;
    proxy::Trained t = proxy::train(model, kind, train.loads(), train.labels(), pc, cfg.threads);
    Evaluation e = evaluate(t.model, model, test, cfg.threads);
    return {std::move(t), e};
}

/// Clean datasets, three clean proxies, surrogate, poisoned dataset, three
/// poisoned proxies, all evaluated on the clean held-out set. When
/// `artifact_dir` is non-empty, every artifact is written as soon as it exists.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::string& artifact_dir = "",
                                   const Progress& progress = {}) {
    cfg.check();
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const bool persist = !artifact_dir.empty();
    auto out_path = [&](const std::string& name) { return (std::filesystem::path(artifact_dir) / name).string(); };
    if (persist) {
        std::error_code ec;
        std::filesystem::create_directories(std::filesystem::path(artifact_dir) / "models", ec);
        if (ec) throw IoError("cannot create " + artifact_dir + "/models: " + ec.message());
    }

    const grid::Network net = run_stage("load-case", [&] { return cfg.network(); });
    const opf::DispatchModel model = run_stage("load-case", [&] { return opf::DispatchModel(net); });

    PipelineResult res;
    say("generating datasets");
    std::tie(res.train, res.test) = make_datasets(cfg, model);
    if (persist) {
        save_dataset(res.train, out_path("dataset_train.jsonl"));
        save_dataset(res.test, out_path("dataset_test.jsonl"));
    }

    auto record = [&](proxy::ProxyKind kind, const std::string& condition, const proxy::Trained& t, const Evaluation& e) {
        ReportRow row{proxy::to_string(kind), condition, e.optimality_gap, e.feasibility.mean_pu, e.feasibility.mean_mw,
                      cfg.timing ? e.inference_seconds : 0.0, cfg.timing ? t.report.seconds : 0.0};
        res.report.rows.push_back(row);
        res.report.aux.push_back({row.method, condition, e.output_mse, e.feasibility.max_pu, t.report.final_loss,
                                  t.report.skipped_samples});
    };

    std::vector<std::pair<proxy::Trained, Evaluation>> clean;
    for (auto kind : cfg.methods) {
        say(std::string("training ") + proxy::to_string(kind) + " on clean data");
        clean.push_back(run_stage(std::string("train-clean-") + proxy::to_string(kind), [&] {
            return train_and_evaluate(cfg, model, kind, res.train, res.test, false);
        }));
        if (persist) proxy::save_proxy(clean.back().first.model, model_file(artifact_dir, kind, "clean"));
    }

    say("poisoning the training set");
    Poisoned p = run_stage("poison", [&] { return poison_dataset(res.train, cfg.attack, cfg.threads); });
    res.poisoned = std::move(p.data);
    res.diagnostics = p.diagnostics;
    if (cfg.attack.mode == attack::Mode::sign_gradient && cfg.attack.iterations == 1)
        res.saturation_threshold = attack::saturation_threshold(res.train.loads(), cfg.attack);
    if (persist) {
        const std::string path = out_path("dataset_poisoned.jsonl");
        save_dataset(res.poisoned, path);
        write_file(provenance_path(path), poison_provenance(cfg.attack, p.surrogate, res.train, p.diagnostics).dump(2) + "\n");
        nn::save_model(p.surrogate, out_path("surrogate.bin"));
    }

    for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
        const auto kind = cfg.methods[i];
        say(std::string("training ") + proxy::to_string(kind) + " on poisoned data");
        auto poisoned = run_stage(std::string("train-poisoned-") + proxy::to_string(kind), [&] {
            return train_and_evaluate(cfg, model, kind, res.poisoned, res.test, true);
        });
        if (persist) proxy::save_proxy(poisoned.first.model, model_file(artifact_dir, kind, "poisoned"));
        record(kind, "clean", clean[i].first, clean[i].second);
        record(kind, "poisoned", poisoned.first, poisoned.second);
    }
    if (persist) {
        write_file(out_path("report.csv"), report_csv(res.report));
        write_file(out_path("report_aux.csv"), aux_csv(res.report));
    }
    return res;
}

// --- perturbation sweep ----------------------------------------------------------

struct SweepResult {
    std::vector<double> deltas;  // strictly increasing
    double saturation_threshold = 0.0;
    std::vector<std::string> methods;
    // [method][delta]
    std::vector<std::vector<double>> opt_gap;
    std::vector<std::vector<double>> feas_gap_pu;
    std::vector<std::vector<double>> feas_gap_mw;
    // clean-trained reference per method
    std::vector<double> baseline_opt_gap;
    std::vector<double> baseline_feas_gap_pu;
};

/// Grid for a sweep: explicit deltas, or fractions of the saturation threshold.
inline std::vector<double> sweep_grid(const ExperimentConfig& cfg, double threshold) {
    if (!cfg.sweep_deltas.empty()) return cfg.sweep_deltas;
    std::vector<double> g;
    for (double f : cfg.sweep_fractions) g.push_back(f * threshold);
    for (std::size_t i = 1; i < g.size(); ++i)
        if (!(g[i] > g[i - 1])) throw ValidationError("sweep grid is not strictly increasing (zero saturation threshold?)");
    return g;
}

/// Re-poisons and retrains for each delta with all seeds fixed. One surrogate,
/// trained on the clean set, serves every delta.
inline SweepResult sweep_perturbation(const ExperimentConfig& cfg, const Progress& progress = {}) {
    cfg.check();
    if (cfg.attack.mode != attack::Mode::sign_gradient || cfg.attack.iterations != 1)
        throw ValidationError("sweeps require the single-step sign-gradient attack");
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const grid::Network net = run_stage("load-case", [&] { return cfg.network(); });
    const opf::DispatchModel model(net);
    const auto [train, test] = make_datasets(cfg, model);

    SweepResult sr;
    sr.saturation_threshold = attack::saturation_threshold(train.loads(), cfg.attack);
    sr.deltas = sweep_grid(cfg, sr.saturation_threshold);
    if (sr.deltas.empty()) throw ValidationError("empty sweep grid");
    for (auto k : cfg.methods) sr.methods.push_back(proxy::to_string(k));
    const std::size_t nm = cfg.methods.size(), nd = sr.deltas.size();
    sr.opt_gap.assign(nm, std::vector<double>(nd));
    sr.feas_gap_pu.assign(nm, std::vector<double>(nd));
    sr.feas_gap_mw.assign(nm, std::vector<double>(nd));

    for (auto kind : cfg.methods) {
        say(std::string("baseline ") + proxy::to_string(kind));
        const auto e = run_stage("baseline", [&] { return train_and_evaluate(cfg, model, kind, train, test, false).second; });
        sr.baseline_opt_gap.push_back(e.optimality_gap);
        sr.baseline_feas_gap_pu.push_back(e.feasibility.mean_pu);
    }

    const nn::MlpModel surrogate = run_stage("surrogate", [&] {
        return attack::train_surrogate(train.loads(), train.labels(), cfg.attack);
    });
    for (std::size_t d = 0; d < nd; ++d) {
        attack::AttackConfig ac = cfg.attack;
        ac.step = sr.deltas[d];
        const Dataset poisoned = run_stage("poison", [&] { return poison_dataset(train, ac, cfg.threads, &surrogate).data; });
        for (std::size_t m = 0; m < nm; ++m) {
            say("delta " + format_double(sr.deltas[d]) + " " + sr.methods[m]);
            const auto e = run_stage("sweep-train", [&] {
                return train_and_evaluate(cfg, model, cfg.methods[m], poisoned, test, true).second;
            });
            sr.opt_gap[m][d] = e.optimality_gap;
            sr.feas_gap_pu[m][d] = e.feasibility.mean_pu;
            sr.feas_gap_mw[m][d] = e.feasibility.mean_mw;
        }
    }
    return sr;
}

inline std::string sweep_csv(const SweepResult& s) {
    if (s.deltas.empty() || s.methods.empty()) throw ValidationError("empty sweep");
    std::string out = "delta,method,opt_gap,feas_gap_pu,feas_gap_mw\n";
    for (std::size_t d = 0; d < s.deltas.size(); ++d)
        for (std::size_t m = 0; m < s.methods.size(); ++m)
            out += format_double(s.deltas[d]) + "," + s.methods[m] + "," + format_double(s.opt_gap[m][d]) + "," +
                   format_double(s.feas_gap_pu[m][d]) + "," + format_double(s.feas_gap_mw[m][d]) + "\n";
    return out;
}

/// One panel per (method, metric): delta on the x axis, the clean baseline as
/// a red cross at delta = 0, the saturation threshold as a dashed line.
inline std::string sweep_svg(const SweepResult& s) {
    if (s.deltas.empty() || s.methods.empty()) throw ValidationError("empty sweep");
    constexpr double kPanelW = 320, kPanelH = 220, kPad = 46;
    const double width = 2 * kPanelW, height = static_cast<double>(s.methods.size()) * kPanelH + 30;
    std::ostringstream o;
    o.precision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
      << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">Error versus perturbation (saturation at delta* = " << s.saturation_threshold << ")</text>\n";
    const double xmax = s.deltas.back() > 0 ? s.deltas.back() : 1.0;
    for (std::size_t m = 0; m < s.methods.size(); ++m) {
        for (int metric = 0; metric < 2; ++metric) {
            const auto& ys = metric == 0 ? s.opt_gap[m] : s.feas_gap_pu[m];
            const double base = metric == 0 ? s.baseline_opt_gap[m] : s.baseline_feas_gap_pu[m];
            double ymax = base;
            for (double y : ys) ymax = std::max(ymax, y);
            if (!(ymax > 0)) ymax = 1.0;
            ymax *= 1.1;
            const double ox = metric * kPanelW + kPad, oy = 30 + static_cast<double>(m) * kPanelH + 14;
            const double pw = kPanelW - kPad - 14, ph = kPanelH - kPad - 14;
            auto px = [&](double x) { return ox + pw * x / xmax; };
            auto py = [&](double y) { return oy + ph - ph * y / ymax; };
            o << "<g>\n<text x=\"" << ox + pw / 2 << "\" y=\"" << oy - 2 << "\" text-anchor=\"middle\">" << s.methods[m]
              << (metric == 0 ? " (optimality gap)" : " (feasibility gap, pu)") << "</text>\n";
            o << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << pw << "\" height=\"" << ph
              << "\" fill=\"none\" stroke=\"black\"/>\n";
            for (int t = 0; t <= 4; ++t) {
                const double yv = ymax * t / 4, xv = xmax * t / 4;
                o << "<text x=\"" << ox - 4 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
                o << "<text x=\"" << px(xv) << "\" y=\"" << oy + ph + 14 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
            }
            if (s.saturation_threshold > 0 && s.saturation_threshold <= xmax)
                o << "<line x1=\"" << px(s.saturation_threshold) << "\" y1=\"" << oy << "\" x2=\"" << px(s.saturation_threshold)
                  << "\" y2=\"" << oy + ph << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
            o << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.6\" points=\"";
            for (std::size_t d = 0; d < s.deltas.size(); ++d) o << px(s.deltas[d]) << "," << py(ys[d]) << " ";
            o << "\"/>\n";
            for (std::size_t d = 0; d < s.deltas.size(); ++d)
                o << "<circle cx=\"" << px(s.deltas[d]) << "\" cy=\"" << py(ys[d]) << "\" r=\"2.5\" fill=\"#1f5fa8\"/>\n";
            const double bx = px(0.0), by = py(base);
            o << "<path d=\"M" << bx - 5 << "," << by - 5 << " L" << bx + 5 << "," << by + 5 << " M" << bx - 5 << "," << by + 5
              << " L" << bx + 5 << "," << by - 5 << "\" stroke=\"red\" stroke-width=\"2\"/>\n";
            o << "<text x=\"" << ox + pw / 2 << "\" y=\"" << oy + ph + 28 << "\" text-anchor=\"middle\">delta (pu)</text>\n</g>\n";
        }
    }
    o << "</svg>\n";
    return o.str();
}

// --- run manifest -----------------------------------------------------------------

/// Machine-readable record written next to every command's outputs.
inline nlohmann::json run_manifest(const std::string& command, const ExperimentConfig& cfg,
                                   const std::vector<std::pair<std::string, std::string>>& inputs,
                                   const std::vector<std::string>& outputs) {
    nlohmann::json in = nlohmann::json::object();
    for (const auto& [path, hash] : inputs) in[path] = hash;
#ifdef POISONOPF_VERSION
    const char* version = POISONOPF_VERSION;
#else
    const char* version = "unknown";
#endif
    return {{"command", command},
            {"version", version},
            {"config_hash", config_hash(cfg)},
            {"config", cfg},
            {"inputs", in},
            {"outputs", outputs},
            {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)}};
}

}  // namespace poisonopf::experiment
