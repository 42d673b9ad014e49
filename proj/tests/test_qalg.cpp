#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "qkck/qalg.hpp"

#include <Eigen/QR>

using namespace qkck;

namespace {

Vec basis_vec(int dim, int k) {
    Vec v = Vec::Zero(dim);
    v[k] = 1.0;
    return v;
}

Metric random_spd_metric(Rng& rng, int dim) {
    Mat a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = 0.3 * rng.normal();
    Mat g = a.transpose() * a + Mat::Identity(dim, dim);
    return Metric::from_matrix(g);
}

// Random SO(3) rotation applied to an admissible triple stays admissible.
AdmissibleBasis rotate_basis(const Metric& g, const AdmissibleBasis& b, Rng& rng) {
    Mat m(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(m);
    Mat r = qr.householderQ();
    if (r.determinant() < 0) r.col(0) *= -1.0;
    Mat J[3];
    for (int a = 0; a < 3; ++a) {
        J[a] = Mat::Zero(b.dim(), b.dim());
        for (int c = 0; c < 3; ++c) J[a] += r(a, c) * b.J[c];
    }
    return AdmissibleBasis::from_endos(g, J[0], J[1], J[2]);
}

} // namespace

TEST_CASE("standard flat basis: block action and invariants") {
    auto [g, b] = standard_flat_basis(2);
    int d = 8;
    CHECK((b.J[0] * basis_vec(d, 0) - basis_vec(d, 1)).norm() == 0.0);
    CHECK((b.J[0] * basis_vec(d, 1) + basis_vec(d, 0)).norm() == 0.0);
    CHECK((b.J[0] * basis_vec(d, 4) - basis_vec(d, 5)).norm() == 0.0);
    CHECK((b.J[2] - b.J[0] * b.J[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.residuals(g).max() <= 1e-10);
    // |omega_1|^2 = 2n
    CHECK(lambda2_inner(g, b.omega[0], b.omega[0]) == doctest::Approx(4.0).epsilon(1e-12));

    auto [g3, b3] = standard_flat_basis(3);
    CHECK(b3.residuals(g3).max() <= 1e-10);
    CHECK(lambda2_inner(g3, b3.omega[1], b3.omega[1]) == doctest::Approx(6.0).epsilon(1e-12));

    CHECK_THROWS_AS(standard_flat_basis(1), std::invalid_argument);
}

TEST_CASE("lambda2 inner product on decomposables") {
    auto [g, b] = standard_flat_basis(2);
    int d = 8;
    TwoForm e01 = wedge(basis_vec(d, 0), basis_vec(d, 1), g);
    TwoForm e23 = wedge(basis_vec(d, 2), basis_vec(d, 3), g);
    CHECK(lambda2_inner(g, e01, e01) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(lambda2_inner(g, e01, e23) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(lambda2_inner(g, b.omega[0], b.omega[1]) == doctest::Approx(0.0).epsilon(1e-14));

    Metric g2 = Metric::identity(4);
    TwoForm small(4);
    CHECK_THROWS_AS(lambda2_inner(g, e01, small), std::invalid_argument);
}

TEST_CASE("lambda2 inner against general-metric determinant formula") {
    Rng rng(11);
    Metric g = random_spd_metric(rng, 8);
    for (int it = 0; it < 50; ++it) {
        Vec x = rng.vec(8), y = rng.vec(8), z = rng.vec(8), v = rng.vec(8);
        double want = g.ip(x, z) * g.ip(y, v) - g.ip(x, v) * g.ip(y, z);
        double got = lambda2_inner(g, wedge(x, y, g), wedge(z, v, g));
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("wedge and interior duality") {
    Rng rng(5);
    Metric g = random_spd_metric(rng, 8);
    for (int it = 0; it < 100; ++it) {
        Vec x = rng.vec(8), y = rng.vec(8);
        TwoForm psi = rng.two_form(8);
        // <X ^ Y, psi> = psi(X, Y)
        CHECK(std::abs(lambda2_inner(g, wedge(x, y, g), psi) - psi.eval(x, y)) <=
              1e-12 * std::max(1.0, psi.max_abs() * x.norm() * y.norm()));
        CHECK(wedge(x, x, g).max_abs() <= 1e-14 * x.norm() * x.norm());
        // interior duality: (i_X psi)(Y) = psi(X, Y)
        CHECK(interior(x, psi).dot(y) == doctest::Approx(psi.eval(x, y)).epsilon(1e-12));
        CHECK(g.ip(interior_vec(x, psi, g), y) ==
              doctest::Approx(psi.eval(x, y)).epsilon(1e-10));
    }

    Metric flat = Metric::identity(8);
    Vec e0 = basis_vec(8, 0), e1 = basis_vec(8, 1);
    Vec i0 = interior(e0, wedge(e0, e1, flat));
    CHECK((i0 - e1).norm() <= 1e-15);
}

TEST_CASE("form/endomorphism conversion") {
    auto [g, b] = standard_flat_basis(2);
    CHECK((form_to_endo(g, b.omega[0]) - b.J[0]).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(form_to_endo(g, TwoForm(8)).cwiseAbs().maxCoeff() == 0.0);

    Rng rng(7);
    Metric gr = random_spd_metric(rng, 8);
    for (int it = 0; it < 20; ++it) {
        TwoForm psi = rng.two_form(8);
        TwoForm back = endo_to_form(gr, form_to_endo(gr, psi));
        CHECK((back - psi).max_abs() <= 1e-12 * std::max(1.0, psi.max_abs()));
    }
}

TEST_CASE("endomorphism bracket acting on forms") {
    auto [g, b] = standard_flat_basis(2);
    CHECK(endo_bracket_on_form(b.J[0], b.omega[0], g).max_abs() <= 1e-14);

    TwoForm got = endo_bracket_on_form(b.J[0], b.omega[1], g);
    TwoForm want = 2.0 * b.omega[2];
    CHECK((got - want).max_abs() <= 1e-13);
    // brute-force cross-check through the endomorphism commutator
    Mat comm = b.J[0] * b.J[1] - b.J[1] * b.J[0];
    CHECK((got - endo_to_form(g, comm)).max_abs() <= 1e-13);

    Rng rng(13);
    for (int it = 0; it < 20; ++it) {
        TwoForm pa = rng.two_form(8), pb = rng.two_form(8);
        Mat ea = form_to_endo(g, pa), eb = form_to_endo(g, pb);
        TwoForm lhs = endo_bracket_on_form(ea, pb, g);
        TwoForm rhs = endo_bracket_on_form(eb, pa, g);
        CHECK((lhs + rhs).max_abs() <= 1e-12 * std::max(1.0, lhs.max_abs()));
    }

    bool warn = false;
    Mat not_skew = Mat::Identity(8, 8);
    endo_bracket_on_form(not_skew, b.omega[0], g, &warn);
    CHECK(warn);
    endo_bracket_on_form(b.J[0], b.omega[0], g, &warn);
    CHECK(!warn);
}

TEST_CASE("projection: Kaehler form and coordinate plane") {
    auto [g, b] = standard_flat_basis(2);
    SplitForm s = project(b.omega[0], b, g);
    CHECK((s.s2h - b.omega[0]).max_abs() <= 1e-13);
    CHECK(s.s2e.max_abs() <= 1e-13);
    CHECK(s.hw.max_abs() <= 1e-13);

    TwoForm e01 = wedge(basis_vec(8, 0), basis_vec(8, 1), g);
    SplitForm s2 = project(e01, b, g);
    TwoForm want = 0.25 * b.omega[0];
    CHECK((s2.s2h - want).max_abs() <= 1e-13);
}

TEST_CASE("projection: reconstruction, orthogonality, idempotence") {
    auto [g, b] = standard_flat_basis(2);
    Rng rng(17);
    for (int it = 0; it < 30; ++it) {
        TwoForm psi = rng.two_form(8);
        SplitForm s = project(psi, b, g);
        CHECK((s.s2h + s.s2e + s.hw - psi).max_abs() <= 1e-12 * psi.max_abs());
        double scale = std::max(1.0, lambda2_inner(g, psi, psi));
        CHECK(std::abs(lambda2_inner(g, s.s2h, s.s2e)) <= 1e-10 * scale);
        CHECK(std::abs(lambda2_inner(g, s.s2h, s.hw)) <= 1e-10 * scale);
        CHECK(std::abs(lambda2_inner(g, s.s2e, s.hw)) <= 1e-10 * scale);

        SplitForm ss = project(s.s2e, b, g);
        CHECK((ss.s2e - s.s2e).max_abs() <= 1e-12 * std::max(1.0, s.s2e.max_abs()));
        CHECK(ss.s2h.max_abs() <= 1e-12 * std::max(1.0, psi.max_abs()));
        SplitForm sh = project(s.s2h, b, g);
        CHECK((sh.s2h - s.s2h).max_abs() <= 1e-12 * std::max(1.0, s.s2h.max_abs()));
        CHECK(sh.s2e.max_abs() <= 1e-12 * std::max(1.0, psi.max_abs()));
        SplitForm sw = project(s.hw, b, g);
        CHECK(sw.s2h.max_abs() <= 1e-12 * std::max(1.0, psi.max_abs()));
        CHECK(sw.s2e.max_abs() <= 1e-12 * std::max(1.0, psi.max_abs()));
    }
}

TEST_CASE("projection is SO(3)-basis independent") {
    auto [g, b] = standard_flat_basis(2);
    Rng rng(19);
    for (int it = 0; it < 10; ++it) {
        AdmissibleBasis br = rotate_basis(g, b, rng);
        CHECK(br.residuals(g).max() <= 1e-12);
        TwoForm psi = rng.two_form(8);
        SplitForm s0 = project(psi, b, g);
        SplitForm s1 = project(psi, br, g);
        CHECK((s0.s2h - s1.s2h).max_abs() <= 1e-10 * std::max(1.0, psi.max_abs()));
        CHECK((s0.s2e - s1.s2e).max_abs() <= 1e-10 * std::max(1.0, psi.max_abs()));
    }
}

TEST_CASE("type (1,1) characterisation of S2E") {
    auto [g, b] = standard_flat_basis(2);
    Rng rng(23);
    for (int it = 0; it < 10; ++it) {
        TwoForm u = project(rng.two_form(8), b, g).s2e;
        for (int a = 0; a < 3; ++a) {
            TwoForm pulled =
                TwoForm::from_matrix(b.J[a].transpose() * u.mat() * b.J[a]);
            CHECK((pulled - u).max_abs() <= 1e-12 * std::max(1.0, u.max_abs()));
        }
        // and conversely a form invariant under all three pullbacks projects to itself
        SplitForm s = project(u, b, g);
        CHECK((s.s2e - u).max_abs() <= 1e-12 * std::max(1.0, u.max_abs()));
    }
}

TEST_CASE("projection is frame independent") {
    Rng rng(29);
    auto [gflat, b] = standard_flat_basis(2);
    // same metric, different orthonormal frame (rotate the Cholesky frame)
    Metric g2 = gflat;
    Mat m(8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) m(i, j) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(m);
    Mat q = qr.householderQ();
    g2.frame = gflat.frame * q;
    for (int it = 0; it < 10; ++it) {
        TwoForm psi = rng.two_form(8);
        SplitForm s0 = project(psi, b, gflat);
        SplitForm s1 = project(psi, b, g2);
        CHECK((s0.s2h - s1.s2h).max_abs() <= 1e-10 * std::max(1.0, psi.max_abs()));
    }
}
