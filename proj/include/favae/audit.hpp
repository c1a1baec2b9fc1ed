#ifndef FAVAE_AUDIT_HPP
#define FAVAE_AUDIT_HPP

#include <optional>
#include <string>
#include <vector>

#include "favae/features.hpp"
#include "favae/tensor.hpp"

namespace favae {

// Dense symmetric matrix in row-major storage.
struct SymMatrix {
    int dim = 0;
    std::vector<double> a;  // dim * dim

    double& at(int r, int c) { return a[static_cast<size_t>(r) * dim + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * dim + c]; }
    static SymMatrix zero(int d) { return SymMatrix{d, std::vector<double>(d * d, 0.0)}; }
    static SymMatrix identity(int d);
    double trace() const;
};

// Sample mean and unbiased covariance of a feature set (n >= 2).
struct FeatureStats {
    std::vector<double> mean;
    SymMatrix cov;
    std::int64_t n = 0;

    int dim() const { return static_cast<int>(mean.size()); }
};

FeatureStats feature_stats(const std::vector<std::vector<double>>& features);

// Eigenvalues/vectors of a symmetric matrix (cyclic Jacobi): A = V diag(l) V^T.
void sym_eigen(const SymMatrix& a, std::vector<double>& eigvals, SymMatrix& eigvecs);

// Principal square root of a symmetric PSD matrix via eigendecomposition.
// Rejects asymmetry beyond 1e-8 (relative) and eigenvalues below -1e-6;
// negatives above that are clamped to zero.
SymMatrix matrix_sqrt_psd(const SymMatrix& a);

SymMatrix matmul(const SymMatrix& a, const SymMatrix& b);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the trace term
// evaluated in the stable symmetric form Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)).
// Covariances are ridge-regularized (1e-6 I) when n < dim. Non-negative;
// exactly zero on identical stats.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// ---- dataset metrics ---------------------------------------------------------

struct ClassNmse {
    int class_id = 0;
    double nmse = 0.0;
    std::int64_t count = 0;
};

struct AuditReport {
    double rec_loss = 0.0;
    double low_freq_loss = 0.0;
    double high_freq_loss = 0.0;
    double perceptual_proxy = 0.0;
    double feature_frechet = 0.0;
    std::vector<ClassNmse> per_class;  // descending nmse, ties by class id
    std::int64_t pair_count = 0;
};

struct LabeledPair {
    ImageTensor x, xhat;
    std::optional<int> class_id;
    std::string key;  // file-provider lookup key, may be empty
};

// Dataset means of per-image l2 loss and the frequency losses.
// Returns (rec, low, high); column order matches the report.
std::vector<double> recon_metrics(const std::vector<LabeledPair>& pairs);

// Per class: NMSE = sum ||x - xhat||^2 / sum ||x||^2 over the class's pairs.
// Every pair must be labeled.
std::vector<ClassNmse> per_class_nmse(const std::vector<LabeledPair>& pairs);

// The k worst classes, NMSE descending, ties broken by ascending class id.
std::vector<ClassNmse> top_k(const std::vector<ClassNmse>& table, int k);

// Full audit: reconstruction + frequency losses, perceptual proxy,
// feature-Frechet over the provider's descriptors, per-class table when
// every pair is labeled.
AuditReport audit_dataset(const std::vector<LabeledPair>& pairs, const FeatureProvider& provider);

std::string report_to_json(const AuditReport& r, int top = 100);
std::string report_to_text(const AuditReport& r, int top = 10);
std::string per_class_csv(const std::vector<ClassNmse>& table);

}  // namespace favae

#endif
