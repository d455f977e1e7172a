// SPDX-License-Identifier: MIT
// Scratch finite-difference validation of the surrogate jet and tape.
#include "vinn/surrogate.hpp"

#include <cstdio>
#include <random>

using namespace vinn;
using namespace vinn::surrogate;

int main() {
    const int d = 3;
    SurrogateConfig cfg;
    cfg.input_dim = 1 + d;
    cfg.hidden = {9, 7};
    cfg.parameter_seed = 7;
    Normalization norm = Normalization::identity(cfg.input_dim);
    norm.in_shift = Vec::Random(cfg.input_dim) * 0.3;
    norm.in_scale = (Vec::Random(cfg.input_dim).array().abs() + 0.5).matrix();
    norm.out_scale = 2.5;
    norm.out_shift = 0.75;
    SurrogateModel m(cfg, norm);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    const int B = 5;
    Mat batch(cfg.input_dim, B);
    for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = g(rng);

    // 1) jet vs finite differences of forward()
    JetBatch jb = m.jet(batch);
    double worst_g = 0.0, worst_h = 0.0;
    const double h = 1e-5;
    for (int b = 0; b < B; ++b) {
        for (int p = 0; p < cfg.input_dim; ++p) {
            Mat bp = batch, bm = batch;
            bp(p, b) += h; bm(p, b) -= h;
            const double fd = (m.forward(bp)[b] - m.forward(bm)[b]) / (2 * h);
            const double an = (p == 0) ? jb.time_deriv[b] : jb.space_grad(p - 1, b);
            worst_g = std::max(worst_g, std::abs(fd - an) / (1.0 + std::abs(an)));
        }
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                Mat bpp = batch, bpm = batch, bmp = batch, bmm = batch;
                bpp(1 + i, b) += h; bpp(1 + j, b) += h;
                bpm(1 + i, b) += h; bpm(1 + j, b) -= h;
                bmp(1 + i, b) -= h; bmp(1 + j, b) += h;
                bmm(1 + i, b) -= h; bmm(1 + j, b) -= h;
                const double fd = (m.forward(bpp)[b] - m.forward(bpm)[b] -
                                   m.forward(bmp)[b] + m.forward(bmm)[b]) / (4 * h * h);
                const double an = jb.hessian(sym_pair_index(i, j, d), b);
                worst_h = std::max(worst_h, std::abs(fd - an) / (1.0 + std::abs(an)));
            }
    }
    std::printf("grad fd err %.3e   hess fd err %.3e\n", worst_g, worst_h);

    // 2) tape backward vs finite differences in theta for a random functional
    EvalTape tape(m, batch, true);
    const int P = sym_pair_count(d);
    JetCotangent cot;
    cot.value = Vec::Random(B);
    cot.time_deriv = Vec::Random(B);
    cot.space_grad = Mat::Random(d, B);
    cot.hessian = Mat::Random(P, B);
    Vec grad = Vec::Zero(m.parameter_count());
    tape.backward(cot, grad);

    auto functional = [&](const SurrogateModel& mm) {
        JetBatch j = mm.jet(batch);
        double s = j.value.dot(cot.value) + j.time_deriv.dot(cot.time_deriv);
        s += (j.space_grad.array() * cot.space_grad.array()).sum();
        s += (j.hessian.array() * cot.hessian.array()).sum();
        return s;
    };
    const Vec theta0 = m.parameters();
    double worst_t = 0.0;
    std::uniform_int_distribution<int> pick(0, static_cast<int>(theta0.size()) - 1);
    const double ht = 1e-6;
    for (int rep = 0; rep < 60; ++rep) {
        const int k = pick(rng);
        Vec tp = theta0, tm = theta0;
        tp[k] += ht; tm[k] -= ht;
        SurrogateModel mp = m, mmn = m;
        mp.set_parameters(tp);
        mmn.set_parameters(tm);
        const double fd = (functional(mp) - functional(mmn)) / (2 * ht);
        worst_t = std::max(worst_t, std::abs(fd - grad[k]) / (1.0 + std::abs(grad[k])));
    }
    std::printf("theta fd err %.3e\n", worst_t);

    // 3) jet.value equals forward bitwise
    const Vec fv = m.forward(batch);
    std::printf("value match %s\n", (fv.array() == jb.value.array()).all() ? "bitwise" : "MISMATCH");
    return (worst_g < 1e-6 && worst_h < 1e-4 && worst_t < 1e-5) ? 0 : 1;
}
