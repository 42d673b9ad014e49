#pragma once

#include "qkck/qalg.hpp"

#include <optional>

namespace qkck {

// Curvature-type tensor, fully lowered: R(X,Y,Z,V) = g(R_{X,Y} Z, V).
// Ricci convention: Ric(X,V) = sum_k R(e_k, X, V, e_k) over a g-orthonormal
// frame, so that the round sphere has positive Ricci curvature.
struct CurvatureOp {
    Tensor4 R;

    int dim() const { return R.dim(); }

    // The 2-form (U,V) -> R(Y,Z,U,V).
    TwoForm pair_form(const Vec& y, const Vec& z) const;
    // R_{Y,Z} as an endomorphism of TM applied to X.
    Vec endo_apply(const Vec& y, const Vec& z, const Vec& x, const Metric& g) const;

    struct Residuals {
        double antisym12;
        double antisym34;
        double pair_sym;
        double bianchi;
        double max() const;
    };
    Residuals residuals() const;  // relative to max(1, |R|_max)
};

// Action of a curvature-type tensor as an endomorphism of Lambda^2:
// (R(psi))(Y,Z) = <R_{Y,Z}, psi>.
TwoForm lambda2_apply(const Tensor4& r, const TwoForm& psi, const Metric& g);

// Ricci contraction and the Einstein constant fit Ric = nu (n+2) g.
Mat ricci(const Tensor4& r, const Metric& g);
struct EinsteinFit {
    double nu;
    double residual;  // |Ric - nu (n+2) g| / max(|Ric|, tiny), entrywise max
};
EinsteinFit recover_nu(const Tensor4& r, const Metric& g, int n);

// Matrix of the Lambda^2 endomorphism in the <.,.>-orthonormal basis
// {e_k ^ e_l : k < l} built from the metric frame; symmetric by pair symmetry.
Mat lambda2_matrix(const Tensor4& r, const Metric& g);
// 2-form of a coefficient vector in that basis, and the inverse map.
TwoForm lambda2_from_coords(const Vec& coords, const Metric& g);
Vec lambda2_coords(const TwoForm& psi, const Metric& g);

// Point context for the algebraic layer. W and gradW empty mean zero.
struct QKContext {
    int n = 0;
    Metric g;
    AdmissibleBasis basis;
    double nu = 0.0;
    Tensor4 W;
    Tensor5 gradW;

    int dim() const { return 4 * n; }
    bool has_w() const { return W.dim() != 0; }
    bool has_gradw() const { return gradW.dim() != 0; }
};

QKContext flat_context(int n);

// The nu-multiple model term of the curvature of a quaternionic-Kaehler
// metric; W^Q is exactly the remainder after subtracting it.
CurvatureOp base_curvature(const QKContext& ctx);
// base + W; throws if W fails validation.
CurvatureOp full_curvature(const QKContext& ctx);

struct WeylQReport {
    double antisym12, antisym34, pair_sym, bianchi;
    double j_invariance;
    double ricci_null;
    bool pass;
    double max_residual() const;
};
WeylQReport validate_weylq(const Tensor4& w, const QKContext& ctx, double tol = 1e-9);

// Curvature of the Grassmannian Gr_2(C^4) = SU(4)/S(U(2)xU(2)) at the base
// point, with the quaternionic structure from the isotropy su(2) factor.
// Supplies a genuine W^Q != 0 sample; self-validates and throws on a
// convention error.
struct Gr2Model {
    QKContext ctx;
    CurvatureOp full;       // the Lie-theoretic curvature
    double w_fraction;      // |W| / |R| (Frobenius)
};
Gr2Model weylq_grassmannian();

// Section of S^2H + S^2E + TM.
struct ProlongSection {
    TwoForm psi;
    Vec x;
};

// Connection coefficients: the 2-form sourced by the TM component and the
// vector sourced by the form component.
TwoForm dcoeff_form(const Vec& x, const Vec& z, const QKContext& ctx);
Vec dcoeff_vec(const TwoForm& psi, const Vec& z, const QKContext& ctx);

// Curvature of the prolongation connection evaluated on (Y, Z) and a section.
struct RDValue {
    TwoForm form;
    Vec vec;
    double norm(const Metric& g) const;
};
RDValue curvature_RD(const Vec& y, const Vec& z, const ProlongSection& s,
                     const QKContext& ctx);

// residual of (A ^ Id)^{S2E}(v) = [A, v] for A, v in S^2E; throws if either
// input has a part outside S^2E.
double check_identity_put(const TwoForm& a, const TwoForm& v, const QKContext& ctx);

// residual of [W(u), v] = (n+1) [W(v), u]; diagnostic only.
double check_identity_w1(const QKContext& ctx, const TwoForm& u, const TwoForm& v);

// lambda^2-orthonormal basis of the fiber S^2H + S^2E + TM at a point,
// used for holonomy coordinates and rank computations.
struct FiberBasis {
    std::vector<TwoForm> forms;  // 3 spanning S^2H then n(2n+1) spanning S^2E
    Mat vecs;                    // columns: g-orthonormal tangent frame
    int s2h_count = 0;
    int s2e_count = 0;

    int form_count() const { return static_cast<int>(forms.size()); }
    int rank() const { return form_count() + static_cast<int>(vecs.cols()); }

    Vec coords(const ProlongSection& s, const Metric& g) const;
    ProlongSection section(const Vec& coords) const;

    static FiberBasis build(const Metric& g, const AdmissibleBasis& basis);
};

inline int fiber_rank(int n) { return (n + 1) * (2 * n + 3); }

} // namespace qkck
