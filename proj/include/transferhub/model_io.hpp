#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "transferhub/adaptation.hpp"
#include "transferhub/csv.hpp"
#include "transferhub/ensembles.hpp"
#include "transferhub/selection.hpp"

namespace transferhub {

// Flat token-based model files; every double is written with 17 significant
// digits so a load(save(x)) round trip is exact.

namespace io {

inline void expect(std::istream& in, const std::string& want) {
    std::string tok;
    if (!(in >> tok)) throw std::runtime_error("model file truncated, expected '" + want + "'");
    if (tok != want) throw std::runtime_error("model file: expected '" + want + "', got '" + tok + "'");
}

inline std::string token(std::istream& in) {
    std::string t;
    if (!(in >> t)) throw std::runtime_error("model file truncated");
    return t;
}

inline double num(std::istream& in) { return parse_double(token(in)); }

inline long inum(std::istream& in) {
    const std::string t = token(in);
    try {
        std::size_t pos = 0;
        const long v = std::stol(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("model file: expected integer, got '" + t + "'");
    }
}

inline void save_vector(std::ostream& os, const Eigen::VectorXd& v) {
    os << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << fmt_full(v(i));
    os << '\n';
}

inline Eigen::VectorXd load_vector(std::istream& in) {
    const long n = inum(in);
    Eigen::VectorXd v(n);
    for (long i = 0; i < n; ++i) v(i) = num(in);
    return v;
}

inline void save_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    os << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << fmt_full(m(r, c));
        os << '\n';
    }
}

inline Eigen::MatrixXd load_matrix(std::istream& in) {
    const long rows = inum(in);
    const long cols = inum(in);
    Eigen::MatrixXd m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = num(in);
    return m;
}

}  // namespace io

inline void save_gaussian_linear(std::ostream& os, const GaussianLinear& g) {
    os << "gaussian_linear\n";
    os << "alpha " << fmt_full(g.alpha) << " beta " << fmt_full(g.beta) << " n_obs " << g.n_obs
       << " degenerate " << (g.degenerate ? 1 : 0) << " beta_skipped " << (g.beta_skipped ? 1 : 0)
       << '\n';
    os << "m ";
    io::save_vector(os, g.m);
    os << "S_inv ";
    io::save_matrix(os, g.S_inv);
}

inline GaussianLinear load_gaussian_linear(std::istream& in) {
    io::expect(in, "gaussian_linear");
    GaussianLinear g;
    io::expect(in, "alpha");
    g.alpha = io::num(in);
    io::expect(in, "beta");
    g.beta = io::num(in);
    io::expect(in, "n_obs");
    g.n_obs = io::inum(in);
    io::expect(in, "degenerate");
    g.degenerate = io::inum(in) != 0;
    io::expect(in, "beta_skipped");
    g.beta_skipped = io::inum(in) != 0;
    io::expect(in, "m");
    g.m = io::load_vector(in);
    io::expect(in, "S_inv");
    g.S_inv = io::load_matrix(in);
    return g;
}

inline void save_standardizer(std::ostream& os, const Standardizer& s) {
    os << "standardizer\nmean ";
    io::save_vector(os, s.mean);
    os << "scale ";
    io::save_vector(os, s.scale);
}

inline Standardizer load_standardizer(std::istream& in) {
    io::expect(in, "standardizer");
    Standardizer s;
    io::expect(in, "mean");
    s.mean = io::load_vector(in);
    io::expect(in, "scale");
    s.scale = io::load_vector(in);
    return s;
}

inline void save_random_features(std::ostream& os, const RandomFeatures& rf) {
    os << "random_features " << activation_name(rf.activation) << " include_raw "
       << (rf.include_raw ? 1 : 0) << '\n';
    save_standardizer(os, rf.standardizer);
    os << "W ";
    io::save_matrix(os, rf.W);
    os << "b ";
    io::save_vector(os, rf.b.transpose());
}

inline RandomFeatures load_random_features(std::istream& in) {
    io::expect(in, "random_features");
    RandomFeatures rf;
    rf.activation = activation_from_name(io::token(in));
    io::expect(in, "include_raw");
    rf.include_raw = io::inum(in) != 0;
    rf.standardizer = load_standardizer(in);
    io::expect(in, "W");
    rf.W = io::load_matrix(in);
    io::expect(in, "b");
    rf.b = io::load_vector(in).transpose();
    return rf;
}

inline void save_mlp(std::ostream& os, const Mlp& net) {
    os << "mlp " << net.n_layers() << '\n';
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        os << "W ";
        io::save_matrix(os, net.W[l]);
        os << "b ";
        io::save_vector(os, net.b[l]);
    }
}

inline Mlp load_mlp(std::istream& in) {
    io::expect(in, "mlp");
    const long layers = io::inum(in);
    Mlp net;
    for (long l = 0; l < layers; ++l) {
        io::expect(in, "W");
        net.W.push_back(io::load_matrix(in));
        io::expect(in, "b");
        net.b.push_back(io::load_vector(in));
    }
    return net;
}

inline void save_belm(std::ostream& os, const Belm& b) {
    os << "belm\n";
    save_random_features(os, b.features);
    save_gaussian_linear(os, b.head);
}

inline Belm load_belm(std::istream& in) {
    io::expect(in, "belm");
    Belm b;
    b.features = load_random_features(in);
    b.head = load_gaussian_linear(in);
    return b;
}

inline void save_extractor(std::ostream& os, const Extractor& e) {
    if (const auto* id = std::get_if<IdentityFeatures>(&e)) {
        os << "extractor identity " << id->dims << '\n';
    } else if (const auto* rf = std::get_if<RandomFeatures>(&e)) {
        os << "extractor random\n";
        save_random_features(os, *rf);
    } else {
        const auto& mf = std::get<MlpFeatures>(e);
        os << "extractor net\n";
        save_standardizer(os, mf.standardizer);
        save_mlp(os, mf.net);
    }
}

inline Extractor load_extractor(std::istream& in) {
    io::expect(in, "extractor");
    const std::string kind = io::token(in);
    if (kind == "identity") return IdentityFeatures{io::inum(in)};
    if (kind == "random") return load_random_features(in);
    if (kind == "net") {
        MlpFeatures mf;
        mf.standardizer = load_standardizer(in);
        mf.net = load_mlp(in);
        return mf;
    }
    throw std::runtime_error("unknown extractor kind: " + kind);
}

inline void save_source_model(std::ostream& os, const SourceModel& s) {
    os << "transferhub-source 1\n";
    os << "park " << s.park_id << " kind " << s.kind_name() << " val_nrmse " << fmt_full(s.val_nrmse)
       << '\n';
    if (s.is_belm()) {
        save_belm(os, std::get<BelmSource>(s.impl).model);
    } else {
        const auto& m = std::get<MlpSource>(s.impl);
        save_standardizer(os, m.standardizer);
        save_mlp(os, m.net);
    }
}

inline SourceModel load_source_model(std::istream& in) {
    io::expect(in, "transferhub-source");
    io::expect(in, "1");
    SourceModel s;
    io::expect(in, "park");
    s.park_id = io::token(in);
    io::expect(in, "kind");
    const std::string kind = io::token(in);
    io::expect(in, "val_nrmse");
    s.val_nrmse = io::num(in);
    if (kind == "belm") {
        s.impl = BelmSource{load_belm(in)};
    } else if (kind == "mlp") {
        MlpSource m;
        m.standardizer = load_standardizer(in);
        m.net = load_mlp(in);
        s.impl = std::move(m);
    } else {
        throw std::runtime_error("unknown source model kind: " + kind);
    }
    return s;
}

inline void save_forecaster(std::ostream& os, const Forecaster& f) {
    os << "transferhub-forecaster 1\n";
    os << "mode " << adapt_mode_name(f.mode) << " samples " << f.target_samples_used
       << " pooled_fallback " << (f.pooled_fallback ? 1 : 0) << " di_fallback "
       << (f.di_fallback ? 1 : 0) << '\n';
    if (const auto* net = std::get_if<NetPredictor>(&f.core)) {
        os << "core net\n";
        save_standardizer(os, net->standardizer);
        save_mlp(os, net->net);
    } else if (const auto* belm = std::get_if<BelmPredictor>(&f.core)) {
        os << "core belm\n";
        save_belm(os, belm->model);
    } else {
        const auto& p = std::get<BlrPredictor>(f.core);
        os << "core blr per_horizon " << (p.per_horizon ? 1 : 0) << " heads " << p.heads.size() << '\n';
        save_extractor(os, p.extractor);
        for (const auto& h : p.heads) save_gaussian_linear(os, h);
    }
}

inline AdaptMode adapt_mode_from_name(const std::string& name) {
    if (name == "DI") return AdaptMode::di;
    if (name == "DILI") return AdaptMode::dili;
    if (name == "ONLINE") return AdaptMode::online_belm;
    if (name == "FT-WD") return AdaptMode::ft_wd;
    if (name == "FT-WDS") return AdaptMode::ft_wds;
    if (name == "FT-BT") return AdaptMode::ft_bt;
    throw std::runtime_error("unknown adaptation mode: " + name);
}

inline Forecaster load_forecaster(std::istream& in) {
    io::expect(in, "transferhub-forecaster");
    io::expect(in, "1");
    Forecaster f;
    io::expect(in, "mode");
    f.mode = adapt_mode_from_name(io::token(in));
    io::expect(in, "samples");
    f.target_samples_used = io::inum(in);
    io::expect(in, "pooled_fallback");
    f.pooled_fallback = io::inum(in) != 0;
    io::expect(in, "di_fallback");
    f.di_fallback = io::inum(in) != 0;
    io::expect(in, "core");
    const std::string core = io::token(in);
    if (core == "net") {
        NetPredictor p;
        p.standardizer = load_standardizer(in);
        p.net = load_mlp(in);
        f.core = std::move(p);
    } else if (core == "belm") {
        f.core = BelmPredictor{load_belm(in)};
    } else if (core == "blr") {
        BlrPredictor p;
        io::expect(in, "per_horizon");
        p.per_horizon = io::inum(in) != 0;
        io::expect(in, "heads");
        const long n = io::inum(in);
        p.extractor = load_extractor(in);
        for (long i = 0; i < n; ++i) p.heads.push_back(load_gaussian_linear(in));
        f.core = std::move(p);
    } else {
        throw std::runtime_error("unknown forecaster core: " + core);
    }
    return f;
}

// ---- file-level helpers ----

namespace io {
inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write file: " + path);
    return os;
}
inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing expected file: " + path);
    return in;
}
}  // namespace io

inline void save_source_model_file(const std::string& path, const SourceModel& s) {
    auto os = io::open_out(path);
    save_source_model(os, s);
}

inline SourceModel load_source_model_file(const std::string& path) {
    auto in = io::open_in(path);
    return load_source_model(in);
}

inline void save_forecaster_file(const std::string& path, const Forecaster& f) {
    auto os = io::open_out(path);
    save_forecaster(os, f);
}

inline Forecaster load_forecaster_file(const std::string& path) {
    auto in = io::open_in(path);
    return load_forecaster(in);
}

//! Hub directory: one model file per (park, kind) plus manifest.csv with
//! columns park_id,kind,file,val_nrmse.
inline void save_hub(const std::string& dir, const std::vector<SourceModel>& hub) {
    std::filesystem::create_directories(dir);
    CsvTable manifest;
    manifest.header = {"park_id", "kind", "file", "val_nrmse"};
    for (const auto& s : hub) {
        const std::string file = s.park_id + "-" + s.kind_name() + ".model";
        save_source_model_file(dir + "/" + file, s);
        manifest.rows.push_back({s.park_id, s.kind_name(), file, fmt_full(s.val_nrmse)});
    }
    write_csv_file(dir + "/manifest.csv", manifest);
}

inline std::vector<SourceModel> load_hub(const std::string& dir) {
    const CsvTable manifest = read_csv_file(dir + "/manifest.csv");
    std::vector<SourceModel> hub;
    for (const auto& row : manifest.rows) {
        if (row.size() != 4) throw std::runtime_error("malformed hub manifest row");
        hub.push_back(load_source_model_file(dir + "/" + row[2]));
    }
    return hub;
}

//! Ensemble description: member model files by reference plus the weight
//! snapshot (and, for CSGE, the error statistics and PCA basis).
inline void save_bma(const std::string& path, const BmaModel& m, const std::string& member_prefix) {
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto os = io::open_out(path);
    os << "transferhub-ensemble 1\nbma members " << m.members.size() << " degenerate "
       << (m.degenerate ? 1 : 0) << '\n';
    for (std::size_t j = 0; j < m.members.size(); ++j) {
        const std::string file = member_prefix + "-" + std::to_string(j) + ".model";
        save_forecaster_file((base / file).string(), m.members[j]);
        os << file << '\n';
    }
    os << "log_weights ";
    io::save_vector(os, m.log_weights);
}

inline BmaModel load_bma(const std::string& path) {
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto in = io::open_in(path);
    io::expect(in, "transferhub-ensemble");
    io::expect(in, "1");
    io::expect(in, "bma");
    io::expect(in, "members");
    const long n = io::inum(in);
    BmaModel m;
    io::expect(in, "degenerate");
    m.degenerate = io::inum(in) != 0;
    for (long j = 0; j < n; ++j) m.members.push_back(load_forecaster_file((base / io::token(in)).string()));
    io::expect(in, "log_weights");
    m.log_weights = io::load_vector(in);
    return m;
}

inline void save_csge(const std::string& path, const CsgeModel& m, const std::string& member_prefix) {
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto os = io::open_out(path);
    os << "transferhub-ensemble 1\ncsge members " << m.members.size() << '\n';
    for (std::size_t j = 0; j < m.members.size(); ++j) {
        const std::string file = member_prefix + "-" + std::to_string(j) + ".model";
        save_forecaster_file((base / file).string(), m.members[j]);
        os << file << '\n';
    }
    os << "etas " << fmt_full(m.eta_g) << ' ' << fmt_full(m.eta_l) << ' ' << fmt_full(m.eta_h)
       << " eps " << fmt_full(m.eps) << " n_horizons " << m.n_horizons << " knn_k " << m.knn_k << '\n';
    os << "global_errors ";
    io::save_vector(os, m.global_errors);
    os << "horizon_errors ";
    io::save_matrix(os, m.horizon_errors);
    os << "horizon_backfilled";
    for (const bool b : m.horizon_backfilled) os << ' ' << (b ? 1 : 0);
    os << '\n';
    os << "pca_degenerate " << (m.pca.degenerate ? 1 : 0) << '\n';
    os << "pca_mean ";
    io::save_vector(os, m.pca.mean);
    os << "pca_components ";
    io::save_matrix(os, m.pca.components);
    os << "local_points ";
    io::save_matrix(os, m.local_points);
    os << "local_abs_err ";
    io::save_matrix(os, m.local_abs_err);
}

inline CsgeModel load_csge(const std::string& path) {
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto in = io::open_in(path);
    io::expect(in, "transferhub-ensemble");
    io::expect(in, "1");
    io::expect(in, "csge");
    io::expect(in, "members");
    const long n = io::inum(in);
    CsgeModel m;
    for (long j = 0; j < n; ++j) m.members.push_back(load_forecaster_file((base / io::token(in)).string()));
    io::expect(in, "etas");
    m.eta_g = io::num(in);
    m.eta_l = io::num(in);
    m.eta_h = io::num(in);
    io::expect(in, "eps");
    m.eps = io::num(in);
    io::expect(in, "n_horizons");
    m.n_horizons = static_cast<int>(io::inum(in));
    io::expect(in, "knn_k");
    m.knn_k = static_cast<int>(io::inum(in));
    io::expect(in, "global_errors");
    m.global_errors = io::load_vector(in);
    io::expect(in, "horizon_errors");
    m.horizon_errors = io::load_matrix(in);
    io::expect(in, "horizon_backfilled");
    m.horizon_backfilled.resize(static_cast<std::size_t>(m.n_horizons));
    for (int k = 0; k < m.n_horizons; ++k) m.horizon_backfilled[static_cast<std::size_t>(k)] = io::inum(in) != 0;
    io::expect(in, "pca_degenerate");
    m.pca.degenerate = io::inum(in) != 0;
    io::expect(in, "pca_mean");
    m.pca.mean = io::load_vector(in);
    io::expect(in, "pca_components");
    m.pca.components = io::load_matrix(in);
    io::expect(in, "local_points");
    m.local_points = io::load_matrix(in);
    io::expect(in, "local_abs_err");
    m.local_abs_err = io::load_matrix(in);
    return m;
}

}  // namespace transferhub
