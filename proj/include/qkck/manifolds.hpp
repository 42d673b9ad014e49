#pragma once

#include "qkck/curvalg.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>

namespace qkck {

// Coordinate model manifold: a metric field over an open chart ball.
// The flat model short-circuits to exact closed forms; everything else is
// differentiated numerically with centred stencils.
struct ChartModel {
    enum class Kind { Flat, Hpn };
    Kind kind = Kind::Flat;
    std::string name;
    int n = 2;
    double domain_radius = 1e6;
    double fd_step = 1e-4;    // first derivatives of g
    double curv_step = 1e-3;  // derivatives of the Christoffel field
    std::function<Mat(const Vec&)> metric_at;

    int dim() const { return 4 * n; }
    bool inside(const Vec& p, double margin = 0.0) const {
        return p.norm() + margin < domain_radius;
    }
};

ChartModel flat_model(int n);

// Affine chart of quaternionic projective space (ball |q| < 0.8). With
// validate=true the constructor checks, at sample points, that the numerical
// curvature has the quaternionic-Kaehler shape with vanishing W part and a
// point-independent Einstein constant, and throws naming the residual that
// broke otherwise.
ChartModel hpn_chart_model(int n, bool validate = true);

// Christoffel symbols at p: result[k](i,j) = Gamma^k_{ij}.
std::vector<Mat> christoffels(const ChartModel& model, const Vec& p, double step = 0.0);

// Gamma contracted with a direction: G(k,a) = Gamma^k_{Z a}.
Mat gamma_dir(const std::vector<Mat>& gamma, const Vec& z);

struct RiemannResult {
    CurvatureOp op;
    double presym_asymmetry;  // max symmetry violation before enforcement
};
// Curvature from centred differences of the Christoffel field, lowered with
// g(p); (anti)symmetries enforced, pre-enforcement asymmetry reported.
RiemannResult riemann(const ChartModel& model, const Vec& p, double step = 0.0,
                      bool richardson = false);

struct BasisRecovery {
    AdmissibleBasis basis;
    double nu = 0.0;
    double eigen_gap_ratio = 0.0;  // isolation of the 3-dim block
};

// Admissible basis at p. Flat: the constant standard basis. Hpn: recovered
// from the isolated triple eigenspace of the curvature operator on Lambda^2,
// then aligned to `align_to` (if given) by the closest SO(3) rotation.
BasisRecovery basis_field(const ChartModel& model, const Vec& p,
                          const AdmissibleBasis* align_to = nullptr);

struct GeometrySample {
    Vec p;
    Metric g;
    AdmissibleBasis basis;
    std::vector<Mat> gamma;
    double nu = 0.0;
};

// Algebraic context at a sampled point (W, gradW zero).
QKContext point_context(const GeometrySample& s);

// Memoised per-point geometry. Basis gauge is arbitrary but deterministic;
// all cached consumers use SO(3)-invariant operations only.
class GeometryCache {
public:
    explicit GeometryCache(ChartModel model) : model_(std::move(model)) {}

    const ChartModel& model() const { return model_; }
    const GeometrySample& sample(const Vec& p);
    GeometrySample compute(const Vec& p) const;  // no memoisation
    size_t size() const { return cache_.size(); }

private:
    ChartModel model_;
    std::map<std::vector<double>, std::unique_ptr<GeometrySample>> cache_;
};

// Directional covariant derivatives of tensor fields through centred
// differences plus Christoffel corrections.
using FormFieldFn = std::function<TwoForm(const Vec&)>;
using VecFieldFn = std::function<Vec(const Vec&)>;
using OneFormFieldFn = std::function<Vec(const Vec&)>;

TwoForm cov_deriv_form(GeometryCache& cache, const FormFieldFn& f, const Vec& p,
                       const Vec& z, double step = 0.0);
Vec cov_deriv_vec(GeometryCache& cache, const VecFieldFn& f, const Vec& p,
                  const Vec& z, double step = 0.0);

// Lowered covariant derivative of a vector field: K(a,b) = g(nabla_a X, b).
Mat grad_vec_lowered(GeometryCache& cache, const VecFieldFn& f, const Vec& p,
                     double step = 0.0);

} // namespace qkck
