// SPDX-License-Identifier: Apache-2.0
#include "kt/decompose.hpp"
#include "kt/io.hpp"
#include "kt/matching.hpp"
#include "kt/models.hpp"
#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr const char* kVersion = "0.1.0";

int thread_cap() {
    const char* env = std::getenv("KT_THREADS");
    if (env == nullptr) return 1;
    try {
        return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
        return 1;
    }
}

struct CommonOpts {
    int rank = 1;
    int order = 3;
    std::vector<double> tau;
    std::vector<double> rho;
    double eps = 1e-3;
    double eta = 1e-2;
    std::vector<std::int64_t> samples;
    std::uint64_t seed = 0;
    std::uint64_t budget = 50000000;
    double net_resolution = 0.0;
    double sigma = 0.0;
    int window_q = 1;
    std::string out;
};

kt::NetSearchConfig make_net_config(const CommonOpts& o, int order) {
    kt::NetSearchConfig cfg;
    cfg.rank = o.rank;
    cfg.target_eps = o.eps;
    cfg.net_resolution = o.net_resolution;
    cfg.seed = o.seed;
    cfg.budget = o.budget;
    cfg.parallelism = thread_cap();
    if (o.rho.empty())
        cfg.rho = kt::BoundsSpec::uniform(1.0, order);
    else if (o.rho.size() == 1)
        cfg.rho = kt::BoundsSpec::uniform(o.rho[0], order);
    else
        cfg.rho = kt::BoundsSpec{o.rho};
    return cfg;
}

void emit_report(const kt::json& report) { std::cout << report.dump(2) << "\n"; }

kt::json inputs_echo(const CommonOpts& o) {
    return kt::json{{"rank", o.rank},     {"eps", o.eps},
                    {"seed", o.seed},     {"budget", o.budget},
                    {"net_resolution", o.net_resolution}};
}

int run_decompose(const CommonOpts& o, const std::string& in_path) {
    kt::DenseTensor t = kt::tensor_from_json(kt::load_json(in_path));
    kt::NetSearchConfig cfg = make_net_config(o, t.order());
    const auto t0 = std::chrono::steady_clock::now();
    kt::ApproximationResult res = kt::bounded_low_rank_general(t, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    std::cerr << "decompose wall time: "
              << std::chrono::duration<double>(t1 - t0).count() << " s\n";
    kt::json report{{"command", "decompose"},
                    {"inputs", inputs_echo(o)},
                    {"result", kt::approximation_to_json(res)},
                    {"seed", o.seed},
                    {"library_version", kVersion}};
    if (!o.out.empty()) kt::save_json(o.out, kt::approximation_to_json(res));
    emit_report(report);
    return res.partial ? 2 : 0;
}

int run_certify(const CommonOpts& o, const std::string& in_path) {
    kt::CPDecomposition cp = kt::cp_from_json(kt::load_json(in_path));
    std::vector<double> taus = o.tau;
    if (taus.empty()) taus.assign(static_cast<size_t>(cp.order()), 10.0);
    if (taus.size() == 1) taus.assign(static_cast<size_t>(cp.order()), taus[0]);
    kt::KruskalReport rep = kt::check_kruskal_condition(cp, taus, o.budget);
    kt::json certs = kt::json::array();
    for (const auto& c : rep.per_mode) certs.push_back(kt::certificate_to_json(c));
    kt::json report{{"command", "certify"},
                    {"per_mode", std::move(certs)},
                    {"krank_sum", rep.krank_sum},
                    {"margin", rep.margin},
                    {"pass", rep.pass},
                    {"library_version", kVersion}};
    if (!o.out.empty()) kt::save_json(o.out, report);
    emit_report(report);
    return rep.pass ? 0 : 1;
}

int run_align(const CommonOpts& o, const std::string& ref_path, const std::string& cand_path) {
    kt::CPDecomposition ref = kt::cp_from_json(kt::load_json(ref_path));
    kt::CPDecomposition cand = kt::cp_from_json(kt::load_json(cand_path));
    kt::AlignmentResult a = kt::align(ref, cand);
    kt::json aj = kt::alignment_to_json(a);
    if (!o.out.empty()) kt::save_json(o.out, aj);
    emit_report(kt::json{{"command", "align"}, {"result", aj}, {"library_version", kVersion}});
    return 0;
}

kt::json multiview_truth_errors(const kt::MultiViewParams& truth, const kt::MultiViewParams& est) {
    // compare as CP decompositions with weights absorbed into the last mode
    auto absorbed = [](const kt::MultiViewParams& p) {
        std::vector<Eigen::MatrixXd> f = p.means;
        f.back() = f.back() * p.weights.asDiagonal();
        return kt::CPDecomposition(std::move(f));
    };
    kt::AlignmentResult a = kt::align(absorbed(truth), absorbed(est));
    kt::json per_mode = kt::json::array();
    for (int j = 0; j < truth.order(); ++j) {
        Eigen::MatrixXd matched(truth.means[j].rows(), truth.rank());
        for (int r = 0; r < truth.rank(); ++r)
            matched.col(r) = truth.means[j].col(a.permutation[static_cast<size_t>(r)]);
        per_mode.push_back((est.means[j] - matched).norm());
    }
    Eigen::VectorXd wt(truth.rank());
    for (int r = 0; r < truth.rank(); ++r) wt(r) = truth.weights(a.permutation[static_cast<size_t>(r)]);
    return kt::json{{"per_mode_mean_errors", per_mode},
                    {"weight_error", (est.weights - wt).norm()},
                    {"alignment", kt::alignment_to_json(a)}};
}

int run_learn(const CommonOpts& o, const std::string& kind, const std::string& samples_path,
              const std::string& tensor_path, const std::string& truth_path) {
    kt::json report{{"command", "learn"}, {"kind", kind}, {"seed", o.seed},
                    {"library_version", kVersion}};
    int exit_code = 0;
    if (kind == "multiview" || kind == "topic") {
        kt::MultiViewEstimate est;
        if (!tensor_path.empty()) {
            kt::DenseTensor t = kt::tensor_from_json(kt::load_json(tensor_path));
            est = kt::learn_multiview_from_tensor(t, o.rank, make_net_config(o, t.order()));
        } else {
            std::vector<kt::MultiViewSample> samples = kt::read_indicator_csv(samples_path);
            if (samples.empty()) throw kt::IOError("no samples in " + samples_path);
            const int l = static_cast<int>(samples[0].size());
            std::vector<int> dims(static_cast<size_t>(l), 0);
            for (const auto& s : samples)
                for (int j = 0; j < l; ++j)
                    dims[static_cast<size_t>(j)] =
                        std::max(dims[static_cast<size_t>(j)], s[static_cast<size_t>(j)] + 1);
            est = kt::learn_multiview(samples, dims, o.rank, make_net_config(o, l));
        }
        report["estimate"] = kt::multiview_to_json(est.params);
        report["diagnostics"] = {{"decomposition_error", est.diagnostics.decomposition_error},
                                 {"weight_sum_raw", est.diagnostics.weight_sum_raw},
                                 {"normalization_failed", est.diagnostics.normalization_failed},
                                 {"partial", est.diagnostics.partial}};
        if (!truth_path.empty()) {
            kt::MultiViewParams truth = kt::multiview_from_json(kt::load_json(truth_path));
            report["truth_errors"] = multiview_truth_errors(truth, est.params);
        }
        if (!o.out.empty()) kt::save_json(o.out, kt::multiview_to_json(est.params));
        if (est.diagnostics.partial) exit_code = 2;
    } else if (kind == "hmm") {
        const int q = o.window_q;
        kt::HMMEstimate est;
        if (!samples_path.empty()) {
            std::vector<kt::MultiViewSample> rows = kt::read_indicator_csv(samples_path);
            std::vector<std::vector<int>> seqs(rows.begin(), rows.end());
            int n = 0;
            for (const auto& s : seqs)
                for (int x : s) n = std::max(n, x + 1);
            est = kt::learn_hmm(seqs, n, o.rank, q, make_net_config(o, 3));
        } else {
            throw kt::IOError("hmm learning requires --samples (sequences CSV)");
        }
        report["estimate"] = kt::hmm_to_json(est.params);
        report["diagnostics"] = {{"sigma_min_d", est.diagnostics.sigma_min_d},
                                 {"decomposition_error", est.diagnostics.decomposition_error},
                                 {"partial", est.diagnostics.partial}};
        if (!truth_path.empty()) {
            kt::HMMParams truth = kt::hmm_from_json(kt::load_json(truth_path));
            std::vector<int> perm =
                kt::detail::match_columns(est.params.observation, truth.observation);
            Eigen::MatrixXd mt(truth.observation.rows(), truth.states());
            Eigen::MatrixXd pt(truth.states(), truth.states());
            for (int r = 0; r < truth.states(); ++r) mt.col(r) = truth.observation.col(perm[static_cast<size_t>(r)]);
            for (int r = 0; r < truth.states(); ++r)
                for (int c = 0; c < truth.states(); ++c)
                    pt(r, c) = truth.transition(perm[static_cast<size_t>(r)], perm[static_cast<size_t>(c)]);
            report["truth_errors"] = {{"observation_error", (est.params.observation - mt).norm()},
                                      {"transition_error", (est.params.transition - pt).norm()}};
        }
        if (!o.out.empty()) kt::save_json(o.out, kt::hmm_to_json(est.params));
        if (est.diagnostics.partial) exit_code = 2;
    } else if (kind == "gaussian") {
        if (samples_path.empty()) throw kt::IOError("gaussian learning requires --samples");
        Eigen::MatrixXd samples = kt::read_real_csv(samples_path);
        std::optional<double> sigma;
        if (o.sigma > 0.0) sigma = o.sigma;
        kt::GaussianEstimate est = kt::learn_gaussian_mixture(
            samples, o.rank, o.order, sigma, make_net_config(o, o.order));
        report["estimate"] = kt::gaussian_to_json(est.params);
        report["diagnostics"] = {{"mom_l_error", est.diagnostics.mom_l_error},
                                 {"coefficient_fit_failed", est.diagnostics.coefficient_fit_failed},
                                 {"mean_krank", kt::certificate_to_json(est.diagnostics.mean_krank)},
                                 {"partial", est.diagnostics.partial}};
        if (!truth_path.empty()) {
            kt::GaussianMixtureParams truth = kt::gaussian_from_json(kt::load_json(truth_path));
            std::vector<int> perm = kt::detail::match_columns(est.params.means, truth.means);
            Eigen::MatrixXd mt(truth.means.rows(), truth.rank());
            Eigen::VectorXd wt(truth.rank());
            for (int r = 0; r < truth.rank(); ++r) {
                mt.col(r) = truth.means.col(perm[static_cast<size_t>(r)]);
                wt(r) = truth.weights(perm[static_cast<size_t>(r)]);
            }
            report["truth_errors"] = {{"mean_error", (est.params.means - mt).norm()},
                                      {"weight_error", (est.params.weights - wt).norm()}};
        }
        if (!o.out.empty()) kt::save_json(o.out, kt::gaussian_to_json(est.params));
        if (est.diagnostics.partial) exit_code = 2;
    } else {
        throw kt::IOError("unknown learn kind: " + kind);
    }
    emit_report(report);
    return exit_code;
}

int run_sweep(const CommonOpts& o, const std::string& truth_path, int replications) {
    if (o.samples.empty()) throw kt::IOError("sweep requires --samples N values");
    for (size_t i = 1; i < o.samples.size(); ++i)
        if (o.samples[i] < o.samples[i - 1]) throw kt::IOError("sweep sample grid must be ascending");
    kt::MultiViewParams truth = kt::multiview_from_json(kt::load_json(truth_path));
    truth.validate();
    std::ostringstream csv;
    csv << "n_samples,median_error\n";
    kt::json rows = kt::json::array();
    for (std::int64_t n : o.samples) {
        std::vector<double> errs;
        for (int rep = 0; rep < replications; ++rep) {
            const std::uint64_t seed = o.seed + 1000003ULL * static_cast<std::uint64_t>(rep);
            auto samples = kt::sample_multiview(truth, n, seed);
            kt::MultiViewEstimate est =
                kt::learn_multiview(samples, truth.view_dims(), truth.rank(), make_net_config(o, truth.order()));
            kt::json te = multiview_truth_errors(truth, est.params);
            double worst = 0.0;
            for (const auto& e : te["per_mode_mean_errors"]) worst = std::max(worst, e.get<double>());
            errs.push_back(worst);
        }
        std::sort(errs.begin(), errs.end());
        const double median = errs[errs.size() / 2];
        csv << n << "," << median << "\n";
        rows.push_back({{"n_samples", n}, {"median_error", median}});
    }
    if (!o.out.empty()) {
        std::ofstream f(o.out);
        if (!f) throw kt::IOError("cannot write " + o.out);
        f << csv.str();
    }
    emit_report(kt::json{{"command", "sweep"}, {"rows", rows}, {"seed", o.seed},
                         {"library_version", kVersion}});
    return 0;
}

int run_generate(const CommonOpts& o, const std::string& kind, const std::string& params_path) {
    if (o.out.empty()) throw kt::IOError("generate requires --out");
    if (kind == "multiview" || kind == "topic") {
        kt::MultiViewParams p = kt::multiview_from_json(kt::load_json(params_path));
        auto samples = kt::sample_multiview(p, o.samples.empty() ? 1000 : o.samples[0], o.seed);
        kt::write_indicator_csv(o.out, samples, p.order());
    } else if (kind == "hmm") {
        kt::HMMParams p = kt::hmm_from_json(kt::load_json(params_path));
        auto seqs = kt::sample_hmm(p, 2 * o.window_q + 1,
                                   o.samples.empty() ? 1000 : o.samples[0], o.seed);
        std::vector<kt::MultiViewSample> rows(seqs.begin(), seqs.end());
        kt::write_indicator_csv(o.out, rows, 2 * o.window_q + 1);
    } else if (kind == "gaussian") {
        kt::GaussianMixtureParams p = kt::gaussian_from_json(kt::load_json(params_path));
        kt::write_real_csv(o.out, kt::sample_gaussian_mixture(
                                      p, o.samples.empty() ? 1000 : o.samples[0], o.seed));
    } else if (kind == "tensor") {
        kt::CPDecomposition cp = kt::cp_from_json(kt::load_json(params_path));
        kt::save_json(o.out, kt::tensor_to_json(kt::expand(cp)));
    } else {
        throw kt::IOError("unknown generate kind: " + kind);
    }
    emit_report(kt::json{{"command", "generate"}, {"kind", kind}, {"seed", o.seed},
                         {"out", o.out}, {"library_version", kVersion}});
    return 0;
}

int run_show_config(const CommonOpts& o) {
    kt::NetSearchConfig cfg = make_net_config(o, o.order);
    emit_report(kt::json{
        {"command", "show-config"},
        {"defaults",
         {{"rank", cfg.rank},
          {"order", o.order},
          {"rho", cfg.rho.rho},
          {"target_eps", cfg.target_eps},
          {"net_resolution_effective", cfg.effective_resolution(o.order)},
          {"seed", cfg.seed},
          {"budget", cfg.budget},
          {"parallelism", cfg.parallelism},
          {"coarse_joint_budget", cfg.coarse_joint_budget},
          {"coarse_rank1_budget", cfg.coarse_rank1_budget},
          {"column_net_cap", cfg.column_net_cap},
          {"multistart", cfg.multistart},
          {"eta", o.eta},
          {"sigma", o.sigma},
          {"window_q", o.window_q},
          {"tau", o.tau}}},
        {"library_version", kVersion}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust CP tensor decomposition and moment-based learning"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "INI/TOML config file with one [subcommand] section per subcommand; "
                   "command-line flags override file values");

    CommonOpts o;
    std::string in_path, ref_path, cand_path, kind, samples_path, tensor_path, truth_path,
        params_path;
    int replications = 3;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--rank", o.rank, "decomposition rank R");
        sub->add_option("--order", o.order, "tensor order");
        sub->add_option("--tau", o.tau, "robustness parameter(s), one or per mode");
        sub->add_option("--rho", o.rho, "column norm bound(s), one or per mode");
        sub->add_option("--eps", o.eps, "target approximation error");
        sub->add_option("--eta", o.eta, "alignment tolerance");
        sub->add_option("--samples", o.samples, "sample count(s)");
        sub->add_option("--seed", o.seed, "random seed");
        sub->add_option("--budget", o.budget, "candidate evaluation budget");
        sub->add_option("--net-resolution", o.net_resolution, "net resolution override");
        sub->add_option("--sigma", o.sigma, "gaussian component std deviation (0 = estimate)");
        sub->add_option("--window-q", o.window_q, "HMM observation window length");
        sub->add_option("--out", o.out, "output file path");
    };

    CLI::App* dec = app.add_subcommand("decompose", "bounded low-rank approximation");
    add_common(dec);
    dec->add_option("--in", in_path, "input tensor JSON")->required();

    CLI::App* cert = app.add_subcommand("certify", "robust Kruskal-rank certificate");
    add_common(cert);
    cert->add_option("--in", in_path, "input CP JSON")->required();

    CLI::App* al = app.add_subcommand("align", "match two CP decompositions");
    add_common(al);
    al->add_option("--ref", ref_path, "reference CP JSON")->required();
    al->add_option("--cand", cand_path, "candidate CP JSON")->required();

    CLI::App* le = app.add_subcommand("learn", "moment-based parameter learning");
    add_common(le);
    le->add_option("--kind", kind, "multiview | topic | hmm | gaussian")->required();
    le->add_option("--samples-file", samples_path, "samples CSV");
    le->add_option("--tensor", tensor_path, "exact moment tensor JSON");
    le->add_option("--truth", truth_path, "ground-truth params JSON for error report");

    CLI::App* sw = app.add_subcommand("sweep", "sample-size error curve (multiview)");
    add_common(sw);
    sw->add_option("--truth", truth_path, "planted params JSON")->required();
    sw->add_option("--replications", replications, "seeded replications per N");

    CLI::App* gen = app.add_subcommand("generate", "sample or tensor generation");
    add_common(gen);
    gen->add_option("--kind", kind, "multiview | topic | hmm | gaussian | tensor")->required();
    gen->add_option("--params", params_path, "model params or CP JSON")->required();

    CLI::App* sc = app.add_subcommand("show-config", "print effective defaults");
    add_common(sc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (dec->parsed()) return run_decompose(o, in_path);
        if (cert->parsed()) return run_certify(o, in_path);
        if (al->parsed()) return run_align(o, ref_path, cand_path);
        if (le->parsed()) return run_learn(o, kind, samples_path, tensor_path, truth_path);
        if (sw->parsed()) return run_sweep(o, truth_path, replications);
        if (gen->parsed()) return run_generate(o, kind, params_path);
        if (sc->parsed()) return run_show_config(o);
    } catch (const kt::BudgetExceeded& e) {
        std::cerr << "budget exceeded: " << e.what() << "\n";
        return 2;
    } catch (const kt::NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
