#include "favae/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "json.hpp"

#include "favae/losses.hpp"
#include "favae/parallel.hpp"
#include "favae/wavelet.hpp"

namespace favae {

SymMatrix SymMatrix::identity(int d) {
    SymMatrix m = zero(d);
    for (int i = 0; i < d; ++i) m.at(i, i) = 1.0;
    return m;
}

double SymMatrix::trace() const {
    double t = 0.0;
    for (int i = 0; i < dim; ++i) t += at(i, i);
    return t;
}

SymMatrix matmul(const SymMatrix& a, const SymMatrix& b) {
    if (a.dim != b.dim) throw DimensionError(msg("matmul: ", a.dim, " vs ", b.dim));
    SymMatrix out = SymMatrix::zero(a.dim);
    const int d = a.dim;
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double s = a.at(i, k);
            if (s == 0.0) continue;
            for (int j = 0; j < d; ++j) out.at(i, j) += s * b.at(k, j);
        }
    return out;
}

FeatureStats feature_stats(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2)
        throw ArgumentError(msg("feature_stats: need n >= 2 samples, got ", features.size()));
    const int d = static_cast<int>(features.front().size());
    for (const auto& f : features)
        if (static_cast<int>(f.size()) != d)
            throw DimensionError("feature_stats: feature dimensions differ");

    FeatureStats s;
    s.n = static_cast<std::int64_t>(features.size());
    s.mean.assign(d, 0.0);
    for (const auto& f : features)
        for (int i = 0; i < d; ++i) s.mean[i] += f[i];
    for (auto& m : s.mean) m /= static_cast<double>(s.n);

    s.cov = SymMatrix::zero(d);
    for (const auto& f : features)
        for (int i = 0; i < d; ++i) {
            const double di = f[i] - s.mean[i];
            for (int j = i; j < d; ++j) s.cov.at(i, j) += di * (f[j] - s.mean[j]);
        }
    const double denom = static_cast<double>(s.n - 1);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            s.cov.at(i, j) /= denom;
            s.cov.at(j, i) = s.cov.at(i, j);
        }
    return s;
}

// Cyclic Jacobi rotations; robust for the modest dimensions used here.
void sym_eigen(const SymMatrix& a, std::vector<double>& eigvals, SymMatrix& eigvecs) {
    const int d = a.dim;
    SymMatrix m = a;
    eigvecs = SymMatrix::identity(d);

    double scale = 0.0;
    for (double v : m.a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;
    const double tol = 1e-14 * scale;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += m.at(p, q) * m.at(p, q);
        if (std::sqrt(off) <= tol * d) break;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) <= tol * 1e-3) continue;
                const double app = m.at(p, p), aqq = m.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < d; ++k) {
                    const double mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (int k = 0; k < d; ++k) {
                    const double mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
                for (int k = 0; k < d; ++k) {
                    const double vkp = eigvecs.at(k, p), vkq = eigvecs.at(k, q);
                    eigvecs.at(k, p) = c * vkp - s * vkq;
                    eigvecs.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(d);
    for (int i = 0; i < d; ++i) eigvals[i] = m.at(i, i);
}

SymMatrix matrix_sqrt_psd(const SymMatrix& a) {
    const int d = a.dim;
    double scale = 0.0;
    for (double v : a.a) scale = std::max(scale, std::abs(v));
    const double sym_tol = 1e-8 * std::max(1.0, scale);
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            if (std::abs(a.at(i, j) - a.at(j, i)) > sym_tol)
                throw ArgumentError(msg("matrix_sqrt_psd: asymmetry ",
                                        std::abs(a.at(i, j) - a.at(j, i)), " at (", i, ",", j,
                                        ") exceeds tolerance"));
    std::vector<double> vals;
    SymMatrix vecs;
    sym_eigen(a, vals, vecs);
    const double eig_tol = 1e-6 * std::max(1.0, scale);
    for (double& v : vals) {
        if (v < -eig_tol)
            throw NumericError(msg("matrix_sqrt_psd: eigenvalue ", v, " below -1e-6"));
        v = v > 0 ? std::sqrt(v) : 0.0;
    }
    // S = V diag(sqrt(l)) V^T
    SymMatrix out = SymMatrix::zero(d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += vecs.at(i, k) * vals[k] * vecs.at(j, k);
            out.at(i, j) = acc;
            out.at(j, i) = acc;
        }
    return out;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim())
        throw DimensionError(msg("frechet_distance: dims ", a.dim(), " vs ", b.dim()));
    const int d = a.dim();
    // Identical stats have distance exactly zero; skip the round-off-prone
    // numeric route.
    if (a.mean == b.mean && a.cov.a == b.cov.a) return 0.0;

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }

    SymMatrix ca = a.cov, cb = b.cov;
    if (a.n < d)
        for (int i = 0; i < d; ++i) ca.at(i, i) += 1e-6;
    if (b.n < d)
        for (int i = 0; i < d; ++i) cb.at(i, i) += 1e-6;

    const SymMatrix sa = matrix_sqrt_psd(ca);
    SymMatrix inner = matmul(matmul(sa, cb), sa);
    for (int i = 0; i < d; ++i)  // symmetrize round-off
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (inner.at(i, j) + inner.at(j, i));
            inner.at(i, j) = v;
            inner.at(j, i) = v;
        }
    const double cross = matrix_sqrt_psd(inner).trace();
    double dist = mean_term + ca.trace() + cb.trace() - 2.0 * cross;
    const double tol = 1e-6 * std::max(1.0, ca.trace() + cb.trace());
    if (dist < -tol)
        throw NumericError(msg("frechet_distance: negative result ", dist,
                               " beyond round-off tolerance"));
    return std::max(dist, 0.0);
}

// ---- dataset metrics ---------------------------------------------------------

namespace {

double image_mse(const ImageTensor& a, const ImageTensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.data.numel(); ++i) {
        const double dv = static_cast<double>(a.data.data[i]) - b.data.data[i];
        acc += dv * dv;
    }
    return acc / static_cast<double>(a.data.numel());
}

void require_pairs(const std::vector<LabeledPair>& pairs) {
    if (pairs.empty()) throw ArgumentError("audit: empty pair set");
    for (const auto& p : pairs)
        if (!p.x.data.same_shape(p.xhat.data))
            throw DimensionError(msg("audit: pair shapes differ: ", p.x.data.shape_str(), " vs ",
                                     p.xhat.data.shape_str()));
}

}  // namespace

std::vector<double> recon_metrics(const std::vector<LabeledPair>& pairs) {
    require_pairs(pairs);
    const size_t n = pairs.size();
    std::vector<double> rec(n), low(n), high(n);
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        rec[i] = image_mse(pairs[i].x, pairs[i].xhat);
        auto [lo, hi] = frequency_losses(pairs[i].x, pairs[i].xhat);
        low[i] = lo;
        high[i] = hi;
    });
    double rs = 0, ls = 0, hs = 0;
    for (size_t i = 0; i < n; ++i) {  // fixed-order reduction
        rs += rec[i];
        ls += low[i];
        hs += high[i];
    }
    const double dn = static_cast<double>(n);
    return {rs / dn, ls / dn, hs / dn};
}

std::vector<ClassNmse> per_class_nmse(const std::vector<LabeledPair>& pairs) {
    require_pairs(pairs);
    std::map<int, std::pair<double, double>> acc;  // class -> (err energy, signal energy)
    std::map<int, std::int64_t> counts;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (!p.class_id.has_value())
            throw DataError(msg("per_class_nmse: pair ", i, " has no class label"));
        double err = 0.0, sig = 0.0;
        for (std::int64_t k = 0; k < p.x.data.numel(); ++k) {
            const double xv = p.x.data.data[k];
            const double dv = xv - p.xhat.data.data[k];
            err += dv * dv;
            sig += xv * xv;
        }
        auto& slot = acc[*p.class_id];
        slot.first += err;
        slot.second += sig;
        counts[*p.class_id] += 1;
    }
    std::vector<ClassNmse> out;
    for (const auto& [cls, e] : acc) {
        ClassNmse c;
        c.class_id = cls;
        c.nmse = e.second > 0.0 ? e.first / e.second : (e.first > 0.0 ? HUGE_VAL : 0.0);
        c.count = counts[cls];
        out.push_back(c);
    }
    std::sort(out.begin(), out.end(), [](const ClassNmse& a, const ClassNmse& b) {
        if (a.nmse != b.nmse) return a.nmse > b.nmse;
        return a.class_id < b.class_id;
    });
    return out;
}

std::vector<ClassNmse> top_k(const std::vector<ClassNmse>& table, int k) {
    if (k < 1 || k > static_cast<int>(table.size()))
        throw ArgumentError(msg("top_k: k=", k, " outside [1,", table.size(), "]"));
    std::vector<ClassNmse> sorted = table;
    std::sort(sorted.begin(), sorted.end(), [](const ClassNmse& a, const ClassNmse& b) {
        if (a.nmse != b.nmse) return a.nmse > b.nmse;
        return a.class_id < b.class_id;
    });
    sorted.resize(k);
    return sorted;
}

AuditReport audit_dataset(const std::vector<LabeledPair>& pairs, const FeatureProvider& provider) {
    require_pairs(pairs);
    AuditReport r;
    r.pair_count = static_cast<std::int64_t>(pairs.size());
    const auto rm = recon_metrics(pairs);
    r.rec_loss = rm[0];
    r.low_freq_loss = rm[1];
    r.high_freq_loss = rm[2];

    // Per-pair perceptual proxy and feature descriptors (ordered reduction).
    const size_t n = pairs.size();
    std::vector<double> proxy(n);
    std::vector<std::vector<double>> fx(n), fh(n);
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        const auto& p = pairs[i];
        auto stages_x = provider.stages_plain(p.x.data, p.key);
        auto stages_h = provider.stages_plain(p.xhat.data, p.key.empty() ? "" : p.key + ".recon");
        fx[i] = feature_vector(stages_x);
        fh[i] = feature_vector(stages_h);
        if (provider.supports_graph()) {
            Tape tape;
            auto a = tape.constant(p.x.data, "x");
            auto b = tape.constant(p.xhat.data, "xhat");
            proxy[i] = tape.scalar(perceptual_proxy(tape, a, b, provider));
        } else {
            // File-backed features: proxy from the per-image descriptors.
            double acc = 0.0;
            for (size_t k = 0; k < fx[i].size(); ++k) {
                const double dv = fx[i][k] - fh[i][k];
                acc += dv * dv;
            }
            proxy[i] = acc / static_cast<double>(fx[i].size());
        }
    });
    double ps = 0.0;
    for (size_t i = 0; i < n; ++i) ps += proxy[i];
    r.perceptual_proxy = ps / static_cast<double>(n);

    if (n >= 2) {
        r.feature_frechet = frechet_distance(feature_stats(fx), feature_stats(fh));
    }

    bool all_labeled = true;
    for (const auto& p : pairs) all_labeled = all_labeled && p.class_id.has_value();
    if (all_labeled) r.per_class = per_class_nmse(pairs);
    return r;
}

// ---- rendering ---------------------------------------------------------------

std::string report_to_json(const AuditReport& r, int top) {
    nlohmann::ordered_json j;
    j["pair_count"] = r.pair_count;
    j["rec_loss"] = r.rec_loss;
    j["low_freq_loss"] = r.low_freq_loss;
    j["high_freq_loss"] = r.high_freq_loss;
    j["perceptual_proxy"] = r.perceptual_proxy;
    j["feature_frechet"] = r.feature_frechet;
    j["per_class"] = nlohmann::ordered_json::array();
    const int limit = std::min<int>(top, static_cast<int>(r.per_class.size()));
    for (int i = 0; i < limit; ++i) {
        const auto& c = r.per_class[i];
        j["per_class"].push_back({{"class", c.class_id}, {"nmse", c.nmse}, {"count", c.count}});
    }
    return j.dump(2) + "\n";
}

std::string report_to_text(const AuditReport& r, int top) {
    char buf[128];
    std::string out;
    auto row = [&](const char* name, double v) {
        std::snprintf(buf, sizeof(buf), "%-18s %14.6g\n", name, v);
        out += buf;
    };
    std::snprintf(buf, sizeof(buf), "%-18s %14lld\n", "pairs",
                  static_cast<long long>(r.pair_count));
    out += buf;
    row("rec_loss", r.rec_loss);
    row("low_freq_loss", r.low_freq_loss);
    row("high_freq_loss", r.high_freq_loss);
    row("perceptual_proxy", r.perceptual_proxy);
    row("feature_frechet", r.feature_frechet);
    if (!r.per_class.empty()) {
        out += "worst classes (class, nmse, count):\n";
        const int limit = std::min<int>(top, static_cast<int>(r.per_class.size()));
        for (int i = 0; i < limit; ++i) {
            std::snprintf(buf, sizeof(buf), "  %6d %14.6g %8lld\n", r.per_class[i].class_id,
                          r.per_class[i].nmse, static_cast<long long>(r.per_class[i].count));
            out += buf;
        }
    }
    return out;
}

std::string per_class_csv(const std::vector<ClassNmse>& table) {
    std::string out = "class,nmse,count\n";
    char buf[96];
    for (const auto& c : table) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%lld\n", c.class_id, c.nmse,
                      static_cast<long long>(c.count));
        out += buf;
    }
    return out;
}

}  // namespace favae
