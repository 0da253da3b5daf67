// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "kt/matching.hpp"
#include "kt/models.hpp"
#include "kt/spectral.hpp"
#include "kt/tensor.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace kt {

using json = nlohmann::json;

inline constexpr const char* kFormatTensor = "kt-tensor/1";
inline constexpr const char* kFormatCP = "kt-cp/1";
inline constexpr const char* kFormatCertificate = "kt-certificate/1";
inline constexpr const char* kFormatAlignment = "kt-alignment/1";
inline constexpr const char* kFormatApproximation = "kt-approximation/1";
inline constexpr const char* kFormatMultiView = "kt-multiview/1";
inline constexpr const char* kFormatHMM = "kt-hmm/1";
inline constexpr const char* kFormatGaussian = "kt-gaussian/1";

class IOError : public TensorError {
public:
    using TensorError::TensorError;
};

namespace detail {

/// Rejects unknown fields and checks the version tag.
inline void check_object(const json& j, const char* format,
                         const std::vector<std::string>& fields) {
    if (!j.is_object()) throw IOError("expected a JSON object");
    if (!j.contains("format") || j.at("format") != format)
        throw IOError(std::string("missing or wrong format tag, expected ") + format);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key == "format") continue;
        if (std::find(fields.begin(), fields.end(), key) == fields.end())
            throw IOError("unknown field \"" + key + "\" in " + format);
    }
    for (const auto& f : fields)
        if (!j.contains(f)) throw IOError("missing field \"" + f + "\" in " + format);
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw IOError("matrix must be a nonempty array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j.at(i).size()) != cols)
            throw IOError("matrix rows have unequal lengths");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    if (!j.is_array()) throw IOError("vector must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

}  // namespace detail

inline json tensor_to_json(const DenseTensor& t) {
    return json{{"format", kFormatTensor}, {"shape", t.shape()}, {"data", t.values()}};
}

inline DenseTensor tensor_from_json(const json& j) {
    detail::check_object(j, kFormatTensor, {"shape", "data"});
    return DenseTensor(j.at("shape").get<std::vector<int>>(),
                       j.at("data").get<std::vector<double>>());
}

inline json cp_to_json(const CPDecomposition& cp) {
    json factors = json::array();
    for (const auto& f : cp.factors) factors.push_back(detail::matrix_to_json(f));
    return json{{"format", kFormatCP}, {"rank", cp.rank()}, {"factors", std::move(factors)}};
}

inline CPDecomposition cp_from_json(const json& j) {
    detail::check_object(j, kFormatCP, {"rank", "factors"});
    std::vector<Eigen::MatrixXd> f;
    for (const auto& m : j.at("factors")) f.push_back(detail::matrix_from_json(m));
    CPDecomposition cp(std::move(f));
    if (cp.rank() != j.at("rank").get<int>()) throw IOError("rank field disagrees with factors");
    return cp;
}

inline json certificate_to_json(const KrankCertificate& c) {
    return json{{"format", kFormatCertificate},
                {"tau", c.tau},
                {"krank", c.krank},
                {"witness_columns", c.witness_columns},
                {"witness_sigma", c.witness_sigma}};
}

inline KrankCertificate certificate_from_json(const json& j) {
    detail::check_object(j, kFormatCertificate, {"tau", "krank", "witness_columns", "witness_sigma"});
    KrankCertificate c;
    c.tau = j.at("tau").get<double>();
    c.krank = j.at("krank").get<int>();
    c.witness_columns = j.at("witness_columns").get<std::vector<int>>();
    c.witness_sigma = j.at("witness_sigma").get<double>();
    return c;
}

inline json alignment_to_json(const AlignmentResult& a) {
    json scalings = json::array();
    for (const auto& s : a.scalings) scalings.push_back(detail::vector_to_json(s));
    return json{{"format", kFormatAlignment},
                {"permutation", a.permutation},
                {"scalings", std::move(scalings)},
                {"scaling_product_deviation", a.scaling_product_deviation},
                {"per_mode_residuals", a.per_mode_residuals}};
}

inline AlignmentResult alignment_from_json(const json& j) {
    detail::check_object(j, kFormatAlignment,
                         {"permutation", "scalings", "scaling_product_deviation",
                          "per_mode_residuals"});
    AlignmentResult a;
    a.permutation = j.at("permutation").get<std::vector<int>>();
    for (const auto& s : j.at("scalings")) a.scalings.push_back(detail::vector_from_json(s));
    a.scaling_product_deviation = j.at("scaling_product_deviation").get<double>();
    a.per_mode_residuals = j.at("per_mode_residuals").get<std::vector<double>>();
    return a;
}

inline json approximation_to_json(const ApproximationResult& r) {
    return json{{"format", kFormatApproximation},
                {"cp", cp_to_json(r.decomposition)},
                {"achieved_error", r.achieved_error},
                {"candidates_evaluated", r.candidates_evaluated},
                {"subspace_residuals", r.subspace_residuals},
                {"partial", r.partial},
                {"exhaustive", r.exhaustive},
                {"resolution_met", r.resolution_met}};
}

inline ApproximationResult approximation_from_json(const json& j) {
    detail::check_object(j, kFormatApproximation,
                         {"cp", "achieved_error", "candidates_evaluated", "subspace_residuals",
                          "partial", "exhaustive", "resolution_met"});
    ApproximationResult r;
    r.decomposition = cp_from_json(j.at("cp"));
    r.achieved_error = j.at("achieved_error").get<double>();
    r.candidates_evaluated = j.at("candidates_evaluated").get<std::uint64_t>();
    r.subspace_residuals = j.at("subspace_residuals").get<std::vector<double>>();
    r.partial = j.at("partial").get<bool>();
    r.exhaustive = j.at("exhaustive").get<bool>();
    r.resolution_met = j.at("resolution_met").get<bool>();
    return r;
}

inline json multiview_to_json(const MultiViewParams& p) {
    json means = json::array();
    for (const auto& m : p.means) means.push_back(detail::matrix_to_json(m));
    return json{{"format", kFormatMultiView},
                {"weights", detail::vector_to_json(p.weights)},
                {"means", std::move(means)},
                {"probability_columns", p.probability_columns},
                {"c_max", p.c_max}};
}

inline MultiViewParams multiview_from_json(const json& j) {
    detail::check_object(j, kFormatMultiView, {"weights", "means", "probability_columns", "c_max"});
    MultiViewParams p;
    p.weights = detail::vector_from_json(j.at("weights"));
    for (const auto& m : j.at("means")) p.means.push_back(detail::matrix_from_json(m));
    p.probability_columns = j.at("probability_columns").get<bool>();
    p.c_max = j.at("c_max").get<double>();
    return p;
}

inline json hmm_to_json(const HMMParams& p) {
    return json{{"format", kFormatHMM},
                {"transition", detail::matrix_to_json(p.transition)},
                {"observation", detail::matrix_to_json(p.observation)},
                {"stationary", detail::vector_to_json(p.stationary)}};
}

inline HMMParams hmm_from_json(const json& j) {
    detail::check_object(j, kFormatHMM, {"transition", "observation", "stationary"});
    HMMParams p;
    p.transition = detail::matrix_from_json(j.at("transition"));
    p.observation = detail::matrix_from_json(j.at("observation"));
    p.stationary = detail::vector_from_json(j.at("stationary"));
    return p;
}

inline json gaussian_to_json(const GaussianMixtureParams& p) {
    return json{{"format", kFormatGaussian},
                {"weights", detail::vector_to_json(p.weights)},
                {"means", detail::matrix_to_json(p.means)},
                {"sigma", p.sigma}};
}

inline GaussianMixtureParams gaussian_from_json(const json& j) {
    detail::check_object(j, kFormatGaussian, {"weights", "means", "sigma"});
    GaussianMixtureParams p;
    p.weights = detail::vector_from_json(j.at("weights"));
    p.means = detail::matrix_from_json(j.at("means"));
    p.sigma = j.at("sigma").get<double>();
    return p;
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw IOError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IOError("cannot write " + path);
    out << j.dump(2) << "\n";
}

/// CSV with one integer category index per view and a header row.
inline void write_indicator_csv(const std::string& path,
                                const std::vector<MultiViewSample>& samples, int views) {
    std::ofstream out(path);
    if (!out) throw IOError("cannot write " + path);
    for (int j = 0; j < views; ++j) out << (j ? "," : "") << "view" << j;
    out << "\n";
    for (const auto& s : samples) {
        if (static_cast<int>(s.size()) != views) throw IOError("sample arity mismatch");
        for (int j = 0; j < views; ++j) out << (j ? "," : "") << s[static_cast<size_t>(j)];
        out << "\n";
    }
}

inline std::vector<MultiViewSample> read_indicator_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IOError("empty CSV " + path);
    std::vector<MultiViewSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MultiViewSample s;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                s.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw IOError("bad integer cell \"" + cell + "\" in " + path);
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

/// CSV with one real coordinate per column and a header row.
inline void write_real_csv(const std::string& path, const Eigen::MatrixXd& samples) {
    std::ofstream out(path);
    if (!out) throw IOError("cannot write " + path);
    out.precision(17);
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << "x" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << samples(i, j);
        out << "\n";
    }
}

inline Eigen::MatrixXd read_real_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IOError("empty CSV " + path);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IOError("bad number cell \"" + cell + "\" in " + path);
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IOError("no data rows in " + path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw IOError("ragged CSV rows in " + path);
        for (size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

}  // namespace kt
