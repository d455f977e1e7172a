// SPDX-License-Identifier: MIT
#pragma once

#include "vinn/core.hpp"
#include "vinn/problems.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace vinn::surrogate {

enum class Activation { tanh, sigmoid, softplus };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
    }
    return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "softplus") return Activation::softplus;
    throw parameter_error("unknown activation: " + s);
}

struct SurrogateConfig {
    int input_dim = 2; // 1 + d
    std::vector<int> hidden = {64, 64, 64};
    Activation activation = Activation::tanh;
    std::uint64_t parameter_seed = 0;
    // softplus is C^2 but unbounded; using it is a documented deviation
    // that must be acknowledged explicitly.
    bool acknowledge_unbounded_activation = false;

    int space_dim() const { return input_dim - 1; }

    void validate() const {
        if (input_dim < 2) throw parameter_error("input_dim must be >= 2 (time plus space)");
        if (hidden.empty()) throw parameter_error("at least one hidden layer is required");
        for (int w : hidden)
            if (w < 1) throw parameter_error("hidden widths must be >= 1");
        if (activation == Activation::softplus && !acknowledge_unbounded_activation)
            throw parameter_error(
                "softplus is unbounded; set acknowledge_unbounded_activation to use it");
    }
};

/// Affine input map xi = (u - in_shift) .* in_scale onto [-1,1]^{1+d},
/// plus an affine output map value = out_scale * raw + out_shift.
struct Normalization {
    Vec in_shift, in_scale;
    double out_scale = 1.0;
    double out_shift = 0.0;

    static Normalization identity(int input_dim) {
        Normalization n;
        n.in_shift = Vec::Zero(input_dim);
        n.in_scale = Vec::Ones(input_dim);
        return n;
    }

    /// Fit the input map to [0,horizon] x box and the output scale to the
    /// obstacle range sampled on the box.
    static Normalization fit(const problems::VIProblem& p, int obstacle_samples = 256,
                             std::uint64_t seed = 1) {
        const int d = p.dim();
        Normalization n;
        n.in_shift = Vec(1 + d);
        n.in_scale = Vec(1 + d);
        n.in_shift[0] = 0.5 * p.horizon;
        n.in_scale[0] = 2.0 / p.horizon;
        for (int i = 0; i < d; ++i) {
            n.in_shift[1 + i] = 0.5 * (p.domain.lo[i] + p.domain.hi[i]);
            n.in_scale[1 + i] = 2.0 / (p.domain.hi[i] - p.domain.lo[i]);
        }
        auto rng = make_rng(seed, 0x0b5);
        double scale = 0.0;
        Vec x(d);
        for (int s = 0; s < obstacle_samples; ++s) {
            for (int i = 0; i < d; ++i) {
                std::uniform_real_distribution<double> ux(p.domain.lo[i], p.domain.hi[i]);
                x[i] = ux(rng);
            }
            std::uniform_real_distribution<double> ut(0.0, p.horizon);
            scale = std::max(scale, std::abs(p.obstacle.value(ut(rng), x)));
        }
        n.out_scale = scale > 0.0 ? scale : 1.0;
        n.out_shift = 0.0;
        return n;
    }
};

/// Derivative jet of the surrogate over a batch of points (columns).
/// hessian is the spatial Hessian packed as the upper triangle (i <= j).
struct JetBatch {
    Vec value;       // B
    Vec time_deriv;  // B
    Mat space_grad;  // d x B
    Mat hessian;     // P x B, P = d(d+1)/2
    int space_dim = 0;

    Mat hessian_at(int b) const {
        Mat h(space_dim, space_dim);
        for (int i = 0; i < space_dim; ++i)
            for (int j = i; j < space_dim; ++j)
                h(i, j) = h(j, i) = hessian(sym_pair_index(i, j, space_dim), b);
        return h;
    }

    problems::PointJet point_jet(int b) const {
        problems::PointJet j;
        j.value = value[b];
        j.time_deriv = time_deriv[b];
        j.space_grad = space_grad.col(b);
        j.hessian = hessian_at(b);
        return j;
    }
};

/// Cotangents of a JetBatch; zero-size members contribute nothing.
/// hessian cotangents act on packed entries directly (no symmetry doubling).
struct JetCotangent {
    Vec value;
    Vec time_deriv;
    Mat space_grad;
    Mat hessian;
};

namespace detail {

struct ActDerivs {
    Mat a;  // psi(z)
    Mat p1; // psi'
    Mat p2; // psi''
    Mat p3; // psi'''
};

inline void eval_activation(Activation act, const Mat& z, ActDerivs& out, int order) {
    switch (act) {
    case Activation::tanh: {
        out.a = z.array().tanh().matrix();
        if (order >= 1) out.p1 = (1.0 - out.a.array().square()).matrix();
        if (order >= 2) out.p2 = (-2.0 * out.a.array() * out.p1.array()).matrix();
        if (order >= 3)
            out.p3 = (-2.0 * (out.p1.array().square() + out.a.array() * out.p2.array())).matrix();
        break;
    }
    case Activation::sigmoid: {
        out.a = (0.5 * (1.0 + (0.5 * z.array()).tanh())).matrix();
        if (order >= 1) out.p1 = (out.a.array() * (1.0 - out.a.array())).matrix();
        if (order >= 2) out.p2 = (out.p1.array() * (1.0 - 2.0 * out.a.array())).matrix();
        if (order >= 3)
            out.p3 = (out.p2.array() * (1.0 - 2.0 * out.a.array()) -
                      2.0 * out.p1.array().square()).matrix();
        break;
    }
    case Activation::softplus: {
        out.a = (z.array() > 30.0)
                    .select(z.array(), (1.0 + z.array().min(30.0).exp()).log())
                    .matrix();
        Mat sg = (0.5 * (1.0 + (0.5 * z.array()).tanh())).matrix();
        if (order >= 2) out.p2 = (sg.array() * (1.0 - sg.array())).matrix();
        if (order >= 3) out.p3 = (out.p2.array() * (1.0 - 2.0 * sg.array())).matrix();
        if (order >= 1) out.p1 = std::move(sg);
        break;
    }
    }
}

} // namespace detail

class EvalTape;

/// Multilayer perceptron f(t,x;theta) with exact input-derivative jets.
/// Evaluation is a pure function of (theta, inputs); batches are matrices
/// with one point per column, row 0 the time coordinate.
class SurrogateModel {
public:
    SurrogateModel() = default;

    SurrogateModel(SurrogateConfig cfg, Normalization norm)
        : cfg_(std::move(cfg)), norm_(std::move(norm)) {
        cfg_.validate();
        if (norm_.in_shift.size() != cfg_.input_dim || norm_.in_scale.size() != cfg_.input_dim)
            throw contract_error("normalization dimension mismatch");
        init_parameters(cfg_.parameter_seed);
    }

    static SurrogateModel for_problem(const problems::VIProblem& p, SurrogateConfig cfg) {
        cfg.input_dim = 1 + p.dim();
        return SurrogateModel(std::move(cfg), Normalization::fit(p));
    }

    const SurrogateConfig& config() const { return cfg_; }
    const Normalization& normalization() const { return norm_; }
    int input_dim() const { return cfg_.input_dim; }
    int space_dim() const { return cfg_.input_dim - 1; }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    const Mat& weight(int l) const { return weights_[l]; }
    const Vec& bias(int l) const { return biases_[l]; }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
            n += weights_[l].size() + biases_[l].size();
        return n;
    }

    Vec parameters() const {
        Vec theta(parameter_count());
        Eigen::Index o = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            theta.segment(o, weights_[l].size()) =
                Eigen::Map<const Vec>(weights_[l].data(), weights_[l].size());
            o += weights_[l].size();
            theta.segment(o, biases_[l].size()) = biases_[l];
            o += biases_[l].size();
        }
        return theta;
    }

    void set_parameters(const Vec& theta) {
        if (theta.size() != parameter_count())
            throw contract_error("parameter vector size mismatch");
        Eigen::Index o = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Eigen::Map<Vec>(weights_[l].data(), weights_[l].size()) =
                theta.segment(o, weights_[l].size());
            o += weights_[l].size();
            biases_[l] = theta.segment(o, biases_[l].size());
            o += biases_[l].size();
        }
    }

    /// f(t,x;theta) per column of `batch` ((1+d) x B).
    Vec forward(const Mat& batch) const {
        check_batch(batch);
        Mat a = normalized(batch);
        detail::ActDerivs act;
        for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
            Mat z = (weights_[l] * a).colwise() + biases_[l];
            detail::eval_activation(cfg_.activation, z, act, 0);
            a = std::move(act.a);
        }
        Vec out = (weights_.back() * a).row(0).transpose();
        out.array() = norm_.out_scale * (out.array() + biases_.back()[0]) + norm_.out_shift;
        return out;
    }

    JetBatch jet(const Mat& batch) const;

    double value_at(double t, const Vec& x) const {
        return forward(pack_point(t, x))[0];
    }

    problems::PointJet jet_at(double t, const Vec& x) const {
        return jet(pack_point(t, x)).point_jet(0);
    }

    Mat pack_point(double t, const Vec& x) const {
        if (x.size() != space_dim()) throw contract_error("point dimension mismatch");
        Mat b(cfg_.input_dim, 1);
        b(0, 0) = t;
        b.col(0).tail(space_dim()) = x;
        return b;
    }

    Mat normalized(const Mat& batch) const {
        return (batch.colwise() - norm_.in_shift).array().colwise() * norm_.in_scale.array();
    }

    void check_batch(const Mat& batch) const {
        if (batch.rows() != cfg_.input_dim)
            throw contract_error("batch must have 1+d = " + std::to_string(cfg_.input_dim) +
                                 " rows, got " + std::to_string(batch.rows()));
        if (batch.cols() == 0) throw contract_error("empty batch");
        if (!batch.allFinite()) throw evaluation_error("batch contains non-finite entries");
    }

private:
    void init_parameters(std::uint64_t seed) {
        auto rng = make_rng(seed, 0x1417);
        std::vector<int> dims;
        dims.push_back(cfg_.input_dim);
        for (int w : cfg_.hidden) dims.push_back(w);
        dims.push_back(1);
        weights_.clear();
        biases_.clear();
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const int fan_in = dims[l], fan_out = dims[l + 1];
            const double bound = std::sqrt(1.0 / fan_in);
            std::uniform_real_distribution<double> u(-bound, bound);
            Mat w(fan_out, fan_in);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
            weights_.push_back(std::move(w));
            biases_.push_back(Vec::Zero(fan_out));
        }
    }

    friend class EvalTape;

    SurrogateConfig cfg_;
    Normalization norm_;
    std::vector<Mat> weights_;
    std::vector<Vec> biases_;
};

/// Forward pass with recorded intermediate states, enabling reverse-mode
/// gradients of any functional of the jet with respect to theta.
///
/// State layout per layer l: preactivations Z_l (n x B), their input
/// first derivatives Gz_l (n x D*B, coordinate-major blocks of B columns),
/// and spatial second derivatives Hz_l (n x P*B, packed pair blocks).
/// Post-activation states are recomputed on the backward sweep.
class EvalTape {
public:
    EvalTape(const SurrogateModel& model, const Mat& batch, bool with_hessian)
        : model_(&model), with_hess_(with_hessian) {
        model.check_batch(batch);
        const int D = model.input_dim();
        const int d = model.space_dim();
        const int P = sym_pair_count(d);
        const Eigen::Index B = batch.cols();
        B_ = B;
        xi_ = model.normalized(batch);
        const int L = model.layer_count();
        z_.resize(L);
        gz_.resize(L);
        if (with_hess_) hz_.resize(L);

        Mat a;  // activations flowing into the next layer
        Mat g;  // post-activation G state
        Mat h;  // post-activation H state
        detail::ActDerivs act;
        for (int l = 0; l < L; ++l) {
            const Mat& w = model.weight(l);
            const Eigen::Index n = w.rows();
            if (l == 0) {
                z_[l] = (w * xi_).colwise() + model.bias(l);
                gz_[l].resize(n, D * B);
                for (int p = 0; p < D; ++p) {
                    const Vec col = w.col(p) * model.normalization().in_scale[p];
                    gz_[l].middleCols(p * B, B).colwise() = col;
                }
                if (with_hess_) hz_[l] = Mat::Zero(n, P * B);
            } else {
                z_[l] = (w * a).colwise() + model.bias(l);
                gz_[l].noalias() = w * g;
                if (with_hess_) hz_[l].noalias() = w * h;
            }
            if (l + 1 == L) break; // output layer is linear
            detail::eval_activation(model.config().activation, z_[l], act, with_hess_ ? 2 : 1);
            a = std::move(act.a);
            g.resize(n, D * B);
            for (int p = 0; p < D; ++p)
                g.middleCols(p * B, B).array() =
                    act.p1.array() * gz_[l].middleCols(p * B, B).array();
            if (with_hess_) {
                h.resize(n, P * B);
                for (int q = 0; q < P; ++q) {
                    const auto [i, j] = sym_pair_unindex(q, d);
                    h.middleCols(q * B, B).array() =
                        act.p2.array() * gz_[l].middleCols((1 + i) * B, B).array() *
                            gz_[l].middleCols((1 + j) * B, B).array() +
                        act.p1.array() * hz_[l].middleCols(q * B, B).array();
                }
            }
        }

        const double os = model.normalization().out_scale;
        jet_.space_dim = d;
        jet_.value = os * z_[L - 1].row(0).transpose();
        jet_.value.array() += model.normalization().out_shift;
        jet_.time_deriv = os * gz_[L - 1].middleCols(0, B).row(0).transpose();
        jet_.space_grad.resize(d, B);
        for (int i = 0; i < d; ++i)
            jet_.space_grad.row(i) = os * gz_[L - 1].middleCols((1 + i) * B, B).row(0);
        if (with_hess_) {
            jet_.hessian.resize(P, B);
            for (int q = 0; q < P; ++q)
                jet_.hessian.row(q) = os * hz_[L - 1].middleCols(q * B, B).row(0);
        }
        if (!jet_.value.allFinite())
            throw evaluation_error("surrogate evaluation produced non-finite values");
    }

    const JetBatch& jet() const { return jet_; }
    Eigen::Index batch_size() const { return B_; }

    /// Accumulates d<cot, jet>/dtheta into grad (size = parameter_count()).
    void backward(const JetCotangent& cot, Eigen::Ref<Vec> grad) const {
        const SurrogateModel& m = *model_;
        const int D = m.input_dim();
        const int d = m.space_dim();
        const int P = sym_pair_count(d);
        const Eigen::Index B = B_;
        const int L = m.layer_count();
        const double os = m.normalization().out_scale;
        if (grad.size() != m.parameter_count())
            throw contract_error("gradient accumulator size mismatch");

        // Cotangents of the output layer's (Z, Gz, Hz).
        Mat zbar = Mat::Zero(1, B);
        if (cot.value.size()) zbar.row(0) = os * cot.value.transpose();
        Mat gbar = Mat::Zero(1, D * B);
        if (cot.time_deriv.size()) gbar.middleCols(0, B).row(0) = os * cot.time_deriv.transpose();
        if (cot.space_grad.size())
            for (int i = 0; i < d; ++i)
                gbar.middleCols((1 + i) * B, B).row(0) = os * cot.space_grad.row(i);
        Mat hbar;
        const bool use_hess = with_hess_ && cot.hessian.size() > 0;
        if (use_hess) {
            hbar = Mat::Zero(1, P * B);
            for (int q = 0; q < P; ++q)
                hbar.middleCols(q * B, B).row(0) = os * cot.hessian.row(q);
        }

        detail::ActDerivs act;
        Mat a_prev, g_prev, h_prev;
        for (int l = L - 1; l >= 0; --l) {
            // States feeding layer l.
            if (l > 0) {
                detail::eval_activation(m.config().activation, z_[l - 1], act,
                                        with_hess_ ? 2 : 1);
                a_prev = std::move(act.a);
                g_prev.resize(z_[l - 1].rows(), D * B);
                for (int p = 0; p < D; ++p)
                    g_prev.middleCols(p * B, B).array() =
                        act.p1.array() * gz_[l - 1].middleCols(p * B, B).array();
                if (use_hess) {
                    h_prev.resize(z_[l - 1].rows(), P * B);
                    for (int q = 0; q < P; ++q) {
                        const auto [i, j] = sym_pair_unindex(q, d);
                        h_prev.middleCols(q * B, B).array() =
                            act.p2.array() * gz_[l - 1].middleCols((1 + i) * B, B).array() *
                                gz_[l - 1].middleCols((1 + j) * B, B).array() +
                            act.p1.array() * hz_[l - 1].middleCols(q * B, B).array();
                    }
                }
            }

            // Parameter gradients of layer l.
            Mat wbar = Mat::Zero(m.weight(l).rows(), m.weight(l).cols());
            if (l == 0) {
                wbar.noalias() = zbar * xi_.transpose();
                const Vec& sc = m.normalization().in_scale;
                for (int p = 0; p < D; ++p)
                    wbar.col(p) += sc[p] * gbar.middleCols(p * B, B).rowwise().sum();
                // Hz_0 = 0: no Hessian contribution to the first layer's weights.
            } else {
                wbar.noalias() = zbar * a_prev.transpose();
                wbar.noalias() += gbar * g_prev.transpose();
                if (use_hess) wbar.noalias() += hbar * h_prev.transpose();
            }
            const Vec bbar = zbar.rowwise().sum();
            write_layer_grad(grad, l, wbar, bbar);

            if (l == 0) break;

            // Cotangents of the previous layer's post-activation states.
            Mat abar = m.weight(l).transpose() * zbar;
            Mat gpost = m.weight(l).transpose() * gbar;
            Mat hpost;
            if (use_hess) hpost = m.weight(l).transpose() * hbar;

            // Pull back through A = psi(Z), G = psi' Gz, H = psi'' g g + psi' Hz.
            detail::eval_activation(m.config().activation, z_[l - 1], act, use_hess ? 3 : 2);
            const Eigen::Index n = z_[l - 1].rows();
            Mat znew = (abar.array() * act.p1.array()).matrix();
            Mat gnew(n, D * B);
            for (int p = 0; p < D; ++p) {
                gnew.middleCols(p * B, B).array() =
                    act.p1.array() * gpost.middleCols(p * B, B).array();
                znew.array() += gpost.middleCols(p * B, B).array() * act.p2.array() *
                                gz_[l - 1].middleCols(p * B, B).array();
            }
            Mat hnew;
            if (use_hess) {
                hnew.resize(n, P * B);
                for (int q = 0; q < P; ++q) {
                    const auto [i, j] = sym_pair_unindex(q, d);
                    const auto hb = hpost.middleCols(q * B, B).array();
                    const auto gi = gz_[l - 1].middleCols((1 + i) * B, B).array();
                    const auto gj = gz_[l - 1].middleCols((1 + j) * B, B).array();
                    hnew.middleCols(q * B, B).array() = act.p1.array() * hb;
                    znew.array() += hb * (act.p3.array() * gi * gj +
                                          act.p2.array() * hz_[l - 1].middleCols(q * B, B).array());
                    gnew.middleCols((1 + i) * B, B).array() += hb * act.p2.array() * gj;
                    gnew.middleCols((1 + j) * B, B).array() += hb * act.p2.array() * gi;
                }
            }
            zbar = std::move(znew);
            gbar = std::move(gnew);
            if (use_hess) hbar = std::move(hnew);
        }
    }

private:
    void write_layer_grad(Eigen::Ref<Vec> grad, int l, const Mat& wbar, const Vec& bbar) const {
        Eigen::Index o = 0;
        for (int k = 0; k < l; ++k)
            o += model_->weight(k).size() + model_->bias(k).size();
        grad.segment(o, wbar.size()) += Eigen::Map<const Vec>(wbar.data(), wbar.size());
        grad.segment(o + wbar.size(), bbar.size()) += bbar;
    }

    const SurrogateModel* model_;
    bool with_hess_;
    Eigen::Index B_ = 0;
    Mat xi_;
    std::vector<Mat> z_, gz_, hz_;
    JetBatch jet_;
};

inline JetBatch SurrogateModel::jet(const Mat& batch) const {
    return EvalTape(*this, batch, true).jet();
}

/// Versioned checkpoint: config + parameters + normalization + seed.
inline nlohmann::json checkpoint_to_json(const SurrogateModel& m) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = {
        {"input_dim", m.config().input_dim},
        {"hidden", m.config().hidden},
        {"activation", to_string(m.config().activation)},
        {"parameter_seed", m.config().parameter_seed},
        {"acknowledge_unbounded_activation", m.config().acknowledge_unbounded_activation},
    };
    const auto& n = m.normalization();
    j["normalization"] = {
        {"in_shift", std::vector<double>(n.in_shift.data(), n.in_shift.data() + n.in_shift.size())},
        {"in_scale", std::vector<double>(n.in_scale.data(), n.in_scale.data() + n.in_scale.size())},
        {"out_scale", n.out_scale},
        {"out_shift", n.out_shift},
    };
    const Vec theta = m.parameters();
    j["parameters"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    return j;
}

inline SurrogateModel checkpoint_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw dependency_error("unsupported checkpoint format version");
    SurrogateConfig cfg;
    cfg.input_dim = j["config"]["input_dim"].get<int>();
    cfg.hidden = j["config"]["hidden"].get<std::vector<int>>();
    cfg.activation = activation_from_string(j["config"]["activation"].get<std::string>());
    cfg.parameter_seed = j["config"]["parameter_seed"].get<std::uint64_t>();
    cfg.acknowledge_unbounded_activation =
        j["config"].value("acknowledge_unbounded_activation", false);
    Normalization n;
    auto shift = j["normalization"]["in_shift"].get<std::vector<double>>();
    auto scale = j["normalization"]["in_scale"].get<std::vector<double>>();
    n.in_shift = Eigen::Map<const Vec>(shift.data(), static_cast<Eigen::Index>(shift.size()));
    n.in_scale = Eigen::Map<const Vec>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    n.out_scale = j["normalization"]["out_scale"].get<double>();
    n.out_shift = j["normalization"]["out_shift"].get<double>();
    SurrogateModel m(cfg, n);
    auto params = j["parameters"].get<std::vector<double>>();
    m.set_parameters(Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size())));
    return m;
}

inline void save_checkpoint(const SurrogateModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw dependency_error("cannot write checkpoint: " + path);
    out << checkpoint_to_json(m).dump(1, '\t') << "\n";
}

inline SurrogateModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dependency_error("cannot read checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    return checkpoint_from_json(j);
}

} // namespace vinn::surrogate
