#pragma once

#include "qkck/manifolds.hpp"

#include <memory>

namespace qkck {

struct VecField {
    VecFieldFn eval;
    int fd_depth = 0;  // nesting level of finite differences inside eval
};

struct FormField {
    enum class Provenance { ClosedForm, Transported, Constructed };

    FormFieldFn eval;
    Provenance prov = Provenance::ClosedForm;
    int fd_depth = 0;
    // Known codifferential, when the construction supplies one. Consumed by
    // ck_bracket for the Lie-derivative directions; diagnostics always
    // recompute the codifferential by finite differences.
    std::shared_ptr<VecField> codiff_hint;
};

// Stencil width for differentiating a field of the given nesting depth:
// deeper fields carry rougher noise, so the stencil widens.
double fd_step_for_depth(const ChartModel& model, int depth);

// delta psi = -sum_k i_{e_k} nabla_{e_k} psi over a g-orthonormal frame,
// returned as a vector.
Vec codifferential(GeometryCache& cache, const FormField& psi, const Vec& p,
                   double step = 0.0);

// d psi by coordinate differences (no connection needed), and the
// covariant-assembly route used as a torsion-freeness cross-check.
ThreeForm exterior_derivative(GeometryCache& cache, const FormField& psi,
                              const Vec& p, double step = 0.0);
ThreeForm exterior_derivative_cov(GeometryCache& cache, const FormField& psi,
                                  const Vec& p, double step = 0.0);

struct CkResidual {
    double conformal_killing;  // against the degree-2 conformal-Killing equation
    double compatible;         // against the first-order compatible-form system
};
CkResidual ck_residual(GeometryCache& cache, const FormField& psi, const Vec& p);

// Residual of the twistor equation satisfied by the S^2H part of a
// conformal-Killing form: nabla_Y psi^{S2H} + (1/(4n-1)) sum omega_i(X,Y) omega_i.
double twistor_residual(GeometryCache& cache, const FormField& psi, const Vec& p);

// Residual of d psi = -(3/(4n-1)) sum J_i X ^ omega_i with X = delta psi.
double dpsi_formula_residual(GeometryCache& cache, const FormField& psi, const Vec& p);

struct PathSpec {
    std::vector<Vec> waypoints;
    int steps_per_segment = 200;
    bool closed(double tol = 0.0) const {
        return waypoints.size() >= 2 &&
               (waypoints.front() - waypoints.back()).norm() <= tol;
    }
};

struct TransportResult {
    ProlongSection section;
    double drift = 0.0;  // max pre-projection hw fraction seen along the path
    int steps = 0;
};

TransportResult prolong_transport(GeometryCache& cache, const PathSpec& path,
                                  const ProlongSection& init);
// Same path, many sections, shared geometry evaluations.
std::vector<ProlongSection> prolong_transport_many(
    GeometryCache& cache, const PathSpec& path,
    const std::vector<ProlongSection>& inits, double* max_drift = nullptr);

// The parallel extension of a section: evaluating at p transports from the
// anchor to p along a straight chart segment.
struct ParallelField {
    FormField psi;
    VecField x;
};
ParallelField transported_field(GeometryCache& cache, const Vec& anchor,
                                const ProlongSection& value_at_anchor);

struct HolonomyReport {
    int loop_count = 0;
    Vec singular_values;  // ascending, of the stacked holonomy deviations
    int fixed_dim = 0;
    double gap_ratio = 0.0;
    double max_drift = 0.0;
};
HolonomyReport holonomy_dimension(GeometryCache& cache, const Vec& base, int loops,
                                  uint64_t seed, int steps_per_segment = 200);

struct PenroseResult {
    double residual;  // |Dbar sigma| relative to max(1, |sigma|)
    Vec delta_sigma;
};
PenroseResult penrose(GeometryCache& cache, const FormField& sigma, const Vec& p);

// Basis of the isometry algebra of the projective-space chart model:
// (n+1)(2n+3) vector fields from quaternionic anti-Hermitian matrices.
std::vector<VecField> killing_fields_hpn(int n);

struct KillingCheck {
    double lie_metric;   // |L_X g| at p
    double divergence;
    double grad_hw;      // part of nabla X outside S^2H + S^2E
};
KillingCheck killing_check(GeometryCache& cache, const VecField& x, const Vec& p);

// Conformal-Killing form generated by a Killing field on a model with nu != 0:
// psi = (4 / ((4n-1) nu)) (nabla X)^{S2E} - (2 / ((4n-1) nu)) (nabla X)^{S2H}.
FormField killing_to_ck(GeometryCache& cache, const VecField& x);

// The S^2E part of a conformal-Killing form together with the reconstruction
// psi = u - (1/((2n+1) nu)) (nabla delta u)^{S2H}.
struct S2eCorrespondence {
    FormField u;
    VecField x;  // (4n-1)/(4n+2) delta u, by finite differences
    FormField reconstructed;
};
S2eCorrespondence s2e_correspondence(GeometryCache& cache, const FormField& psi);

// [psi1, psi2] = (1/2)(L_{X1} psi2 - L_{X2} psi1) with X_i the codifferentials
// (hints when available, finite differences otherwise).
FormField ck_bracket(GeometryCache& cache, const FormField& psi1,
                     const FormField& psi2);

// [X, Y] by directional differences.
Vec vec_field_bracket(const VecField& x, const VecField& y, const Vec& p,
                      double step);

// Closed-form conformal-Killing family on the flat model: the unique
// parallel-section extension of (psi0, x0) from the origin.
FormField flat_ck_family(int n, const TwoForm& psi0, const Vec& x0);

// Max over frame directions of the parallel-section residual of (psi, X).
double dparallel_residual(GeometryCache& cache, const FormField& psi,
                          const VecField& x, const Vec& p);

} // namespace qkck
