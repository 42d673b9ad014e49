#pragma once

#include "qkck/linalg.hpp"

namespace qkck {

// Local frame (J1, J2, J3) of the quaternionic bundle at a point, together
// with the Kaehler forms omega_a = g(J_a ., .).
struct AdmissibleBasis {
    Mat J[3];
    TwoForm omega[3];

    int dim() const { return static_cast<int>(J[0].rows()); }

    // Builds from the three endomorphisms; omegas are derived from g.
    static AdmissibleBasis from_endos(const Metric& g, const Mat& J1, const Mat& J2,
                                      const Mat& J3);

    struct Residuals {
        double square;       // max_a ||J_a^2 + Id||
        double anticommute;  // max_{a!=b} ||J_a J_b + J_b J_a||
        double triple;       // ||J3 - J1 J2||
        double metric;       // max_a ||g(J_a., J_a.) - g||
        double omega_gram;   // max |<omega_a, omega_b> - 2n delta_ab|
        double max() const;
    };
    Residuals residuals(const Metric& g) const;
    bool valid(const Metric& g, double tol = 1e-10) const { return residuals(g).max() <= tol; }
};

struct SplitForm {
    TwoForm s2h;
    TwoForm s2e;
    TwoForm hw;
};

// Flat model: g = Id on R^{4n}, J_a acting blockwise as right quaternion
// multiplication, J3 = J1 J2. Throws std::invalid_argument for n < 2.
std::pair<Metric, AdmissibleBasis> standard_flat_basis(int n);

// <a, b> = (1/2) sum a_{kl} b^{kl}, indices raised with g.
double lambda2_inner(const Metric& g, const TwoForm& a, const TwoForm& b);
double lambda2_norm(const Metric& g, const TwoForm& a);

// (X ^ Y)(U, V) = g(X,U) g(Y,V) - g(X,V) g(Y,U)
TwoForm wedge(const Vec& x, const Vec& y, const Metric& g);

// i_X psi as a 1-form: (i_X psi)_b = psi(X, e_b).
Vec interior(const Vec& x, const TwoForm& psi);
// Same contraction returned as a vector (indices raised with g).
Vec interior_vec(const Vec& x, const TwoForm& psi, const Metric& g);

// alpha ^ omega for a 1-form alpha (lowered components) and a 2-form.
ThreeForm wedge_1_2(const Vec& alpha, const TwoForm& omega);

// Endomorphism A with g(A X, Y) = psi(X, Y), and its inverse.
Mat form_to_endo(const Metric& g, const TwoForm& psi);
TwoForm endo_to_form(const Metric& g, const Mat& a);

// 2-form of the endomorphism commutator [A, Psi]; A must be g-skew for the
// result to be convention-independent (a warning flag is reported through
// the optional out-parameter).
TwoForm endo_bracket_on_form(const Mat& a, const TwoForm& psi, const Metric& g,
                             bool* skew_warning = nullptr);

// Splitting of Lambda^2 into S^2H, S^2E and the S^2H (x) Lambda^2_0 E rest.
SplitForm project(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g);

TwoForm project_s2h(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g);
TwoForm project_s2e(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g);
// s2h + s2e in one pass.
TwoForm project_compatible(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g);

} // namespace qkck
