#include "koopflow/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace koopflow {

OracleCheck make_check(std::string name, double value, double tolerance)
{
    return {std::move(name), value, tolerance, std::isfinite(value) && value <= tolerance};
}

double relative_error(const Mat& A, const Mat& B, double floor)
{
    return (A - B).norm() / std::max(B.norm(), floor);
}

void perturb_parameters(FlowModel& flow, Rng& rng, double scale)
{
    Vec p = flow.parameters();
    for (Index i = 0; i < p.size(); ++i)
        p(i) += scale * rng.normal();
    flow.set_parameters(p);
}

namespace {

Vec uniform_point(Rng& rng, const DomainBox& box)
{
    Vec x(box.dim());
    for (Index j = 0; j < x.size(); ++j)
        x(j) = rng.uniform(box.lo(j), box.hi(j));
    return x;
}

} // namespace

std::vector<OracleCheck> exact_diffeo_checks(std::uint64_t seed)
{
    const double mu = -0.7, lambda = -0.3;
    const auto sys = make_ex1(mu, lambda);
    const auto box = symmetric_box(2, 5.0);
    const Mat A = jacobian_linearization(sys);
    Rng rng(seed);
    std::vector<OracleCheck> out;

    double worst_inv = 0.0, worst_pre = 0.0;
    const Vec zero = Vec::Zero(2);
    for (int i = 0; i < 1000; ++i) {
        const Vec x = uniform_point(rng, box);
        const Vec d = exact_diffeo_ex1(x, mu, lambda);
        const Mat J = exact_diffeo_ex1_jacobian(x, mu, lambda);
        const Vec xdot = eval_rhs(sys, x);
        const auto inv = loss_terms(d, J, exact_diffeo_ex1(zero, mu, lambda), exact_diffeo_ex1_jacobian(zero, mu, lambda),
                                    A, xdot, ResidualForm::inverse_jacobian);
        const auto pre = loss_terms(d, J, zero, Mat::Identity(2, 2), A, xdot, ResidualForm::premultiplied);
        worst_inv = std::max(worst_inv, std::sqrt(inv.total));
        worst_pre = std::max(worst_pre, std::sqrt(pre.total));
    }
    out.push_back(make_check("exact diffeo: conjugacy residual, inverse form (max over 1000 points)", worst_inv, 1e-12));
    out.push_back(make_check("exact diffeo: conjugacy residual, premultiplied form (max over 1000 points)", worst_pre, 1e-12));

    auto ds = generate_dataset(sys, box, boundary_starts(box, 24, seed), 0.065, 199);
    auto lib = std::make_shared<const EigenfunctionLibrary>(
        build_eigenfunction_library(A, {5, 5}, exact_ex1_map(mu, lambda), ds));
    const auto model = build_kefmd(lib, ds, 0.065);
    out.push_back(make_check("exact diffeo: training reconstruction RMSE", model.fit.residual_rms, 1e-6));

    // Eigenfunction evolution along fine-step RK4 trajectories (13 s each).
    const double dt = 0.01;
    const int steps = 1300;
    double worst_evo = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Vec x0 = uniform_point(rng, box);
        const auto tr = integrate(sys, x0, dt, steps);
        const Vec z0 = lib->lift(x0);
        for (int k = 0; k <= steps; k += 10) {
            const Vec z = lib->lift(tr.states[static_cast<std::size_t>(k)]);
            const Vec expected = z0.cwiseProduct((lib->lambdas() * (k * dt)).array().exp().matrix());
            const Vec err = (z - expected).cwiseAbs().cwiseQuotient(z0.cwiseAbs().cwiseMax(1.0));
            worst_evo = std::max(worst_evo, err.maxCoeff());
        }
    }
    out.push_back(make_check("exact diffeo: eigenfunction evolution error (20 trajectories)", worst_evo, 1e-6));
    return out;
}

std::vector<OracleCheck> kernel_checks(std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<OracleCheck> out;
    const auto box = symmetric_box(2, 5.0);

    FlowModel flow = FlowModel::identity_initialized(FlowArchitecture{}, seed);
    perturb_parameters(flow, rng, 3e-3);

    double worst_rt = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec x = uniform_point(rng, box);
        worst_rt = std::max(worst_rt, (flow.inverse(flow.forward(x)) - x).norm());
    }
    out.push_back(make_check("flow round trip |x - inv(fwd(x))| (1000 points)", worst_rt, 1e-10));

    DenseNet net = DenseNet::he_initialized({2, 16, 16, 3}, rng, false);
    const auto ex1 = make_ex1();
    const auto mono = monomial_dictionary(2, 5, true);
    auto ds = generate_dataset(ex1, box, boundary_starts(box, 6, seed), 0.065, 49);
    const auto rbf = rbf_from_data(ds, 36, seed);
    double worst_net = 0.0, worst_flow = 0.0, worst_dict = 0.0, worst_exact = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Vec x = uniform_point(rng, box);
        worst_net = std::max(worst_net, relative_error(fd_jacobian([&](const Vec& v) { return net.forward(v); }, x),
                                                       net.input_jacobian(x)));
        worst_flow = std::max(worst_flow, relative_error(fd_jacobian([&](const Vec& v) { return flow.forward(v); }, x),
                                                         flow.jacobian(x)));
        for (const auto* dict : {&mono, &rbf})
            worst_dict = std::max(worst_dict, relative_error(fd_jacobian([&](const Vec& v) { return dict_eval(*dict, v); }, x),
                                                             dict_grad(*dict, x)));
        worst_exact = std::max(
            worst_exact, relative_error(fd_jacobian([](const Vec& v) { return exact_diffeo_ex1(v, -0.7, -0.3); }, x),
                                        exact_diffeo_ex1_jacobian(x, -0.7, -0.3)));
    }
    out.push_back(make_check("net input Jacobian vs finite differences", worst_net, 1e-6));
    out.push_back(make_check("flow Jacobian vs finite differences", worst_flow, 1e-6));
    out.push_back(make_check("dictionary gradients vs finite differences", worst_dict, 1e-6));
    out.push_back(make_check("exact diffeo Jacobian vs finite differences", worst_exact, 1e-6));

    // Loss gradient on a batch of ex1 data, sampled parameter coordinates.
    const Mat A = jacobian_linearization(ex1);
    const Mat X = ds.states_matrix().leftCols(16);
    const Mat Xd = ds.derivs_matrix().leftCols(16);
    for (auto form : {ResidualForm::inverse_jacobian, ResidualForm::premultiplied}) {
        for (double reps : {0.0, 1e-2}) {
            LossWeights w;
            w.relative_eps = reps;
            const auto ev = batch_loss_gradient(flow, A, X, Xd, form, w);
            const Vec p0 = flow.parameters();
            FlowModel probe = flow;
            Vec g_fd(40), g_an(40);
            for (int s = 0; s < 40; ++s) {
                const auto idx = static_cast<Index>(rng.below(static_cast<std::uint64_t>(p0.size())));
                const double h = 1e-6;
                Vec p = p0;
                p(idx) += h;
                probe.set_parameters(p);
                const double lp = batch_loss_gradient(probe, A, X, Xd, form, w).loss.total;
                p(idx) -= 2 * h;
                probe.set_parameters(p);
                const double lm = batch_loss_gradient(probe, A, X, Xd, form, w).loss.total;
                g_fd(s) = (lp - lm) / (2 * h);
                g_an(s) = ev.gradient(idx);
            }
            out.push_back(make_check("loss gradient vs finite differences (" + to_string(form) +
                                         (reps > 0 ? ", relative weighting)" : ")"),
                                     relative_error(g_an, g_fd), 1e-4));
        }
    }

    // Lifted-model evolution identities.
    const auto ex3 = make_ex3();
    const Mat A3 = jacobian_linearization(ex3);
    const auto lib3 = enumerate_library(principal_eigenpairs(A3).lambdas, {13, 13});
    const Vec ld = discretize(lib3.lambdas, 0.015);
    double worst_exp = 0.0;
    for (Index i = 0; i < ld.size(); ++i)
        worst_exp = std::max(worst_exp, std::abs(ld(i) - std::exp(lib3.lambdas(i) * 0.015)));
    out.push_back(make_check("Lambda_d vs scalar exp", worst_exp, 1e-15));

    auto lib1 = std::make_shared<const EigenfunctionLibrary>(
        build_eigenfunction_library(A, {5, 5}, identity_map(), ds));
    const auto model = build_kefmd(lib1, ds, 0.065);
    double worst_cont = 0.0, worst_semi = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Vec x0 = uniform_point(rng, box);
        const Vec z0 = lib1->lift(x0);
        const Mat P = predict_trajectory(model, x0, 200);
        for (int k = 0; k <= 200; ++k) {
            const Vec zc = z0.cwiseProduct((model.lambdas * (k * model.dt)).array().exp().matrix());
            worst_cont = std::max(worst_cont, (model.V * zc - P.col(k)).cwiseAbs().maxCoeff());
        }
        const int a = 37, b = 63;
        const Vec pa = model.lambdas_discrete.array().pow(a);
        const Vec pb = model.lambdas_discrete.array().pow(b);
        const Vec pab = model.lambdas_discrete.array().pow(a + b);
        worst_semi = std::max(worst_semi, (z0.cwiseProduct(pab) - pa.cwiseProduct(pb.cwiseProduct(z0))).cwiseAbs().maxCoeff());
    }
    out.push_back(make_check("discrete vs continuous prediction", worst_cont, 1e-12));
    out.push_back(make_check("semigroup Lambda_d^(a+b) z = Lambda_d^a Lambda_d^b z", worst_semi, 1e-13));
    return out;
}

} // namespace koopflow
