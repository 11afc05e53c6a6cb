/*
 * Copyright 2026 The gpimpute Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "gpimpute/unrolled_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "gpimpute/linalg.hpp"

namespace gpimpute {

namespace {

using Trip = Eigen::Triplet<double>;

SpMat sparse(int rows, int cols, const std::vector<Trip>& t) {
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

// Exact linear token-wise maps as relu(x) - relu(-x) pairs.
class LinearFfn {
public:
    explicit LinearFfn(int D) : D_(D) {}

    void add(int dst, int src, double coef) {
        auto it = unit_.find(src);
        int u;
        if (it == unit_.end()) {
            u = hidden_;
            hidden_ += 2;
            unit_[src] = u;
            w2_.emplace_back(u, src, 1.0);
            w2_.emplace_back(u + 1, src, -1.0);
        } else {
            u = it->second;
        }
        w1_.emplace_back(dst, u, coef);
        w1_.emplace_back(dst, u + 1, -coef);
    }
    void add_slot(int dst, int src, double coef, int width) {
        for (int c = 0; c < width; ++c) add(dst + c, src + c, coef);
    }
    void clear_slot(int slot, int width) { add_slot(slot, slot, -1.0, width); }

    Layer build(const std::string& tag) const {
        Layer l;
        l.tag = tag;
        l.has_ffn = true;
        l.ffn.W2 = sparse(hidden_, D_, w2_);
        l.ffn.W1 = sparse(D_, hidden_, w1_);
        l.ffn.b2 = VectorXd::Zero(hidden_);
        l.ffn.b1 = VectorXd::Zero(D_);
        return l;
    }

private:
    int D_;
    int hidden_ = 0;
    std::map<int, int> unit_;
    std::vector<Trip> w1_, w2_;
};

struct MultSite {
    int w_row;
    std::vector<std::pair<int, double>> src;  // slot start rows and coefficients
    int dst;
    int width;
    double Bw, Bx;
};

int mult_depth(double Bw, double Bx, double eps) {
    const double ratio = Bw * Bx / eps;
    if (ratio <= 2.0) return 1;
    return std::max(1, static_cast<int>(std::ceil((std::log2(ratio) - 1.0) / 2.0)));
}

// Square-trick product: wx = Bw Bx (|a|^2 - |b|^2) with a, b = (w/Bw +- x/Bx)/2 and
// y^2 ~ y - sum_s g_s(y) / 4^s for the s-fold tooth map g_s.
std::vector<Layer> relu_mult_layers(int D, const MultSite& m, int scrA, int scrB, double eps,
                                    const std::string& tag) {
    const int depth = mult_depth(m.Bw, m.Bx, eps);
    const double scale = m.Bw * m.Bx;
    std::vector<Layer> out;
    {
        std::vector<Trip> w2, w1;
        int h = 0;
        for (int c = 0; c < m.width; ++c) {
            const int u = h;
            h += 4;
            for (int sgn : {1, -1}) {
                // rows u, u+1: +-a ; rows u+2, u+3: +-b
                const int ra = u + (sgn > 0 ? 0 : 1), rb = u + 2 + (sgn > 0 ? 0 : 1);
                w2.emplace_back(ra, m.w_row, sgn * 0.5 / m.Bw);
                w2.emplace_back(rb, m.w_row, sgn * 0.5 / m.Bw);
                for (auto [slot, coef] : m.src) {
                    w2.emplace_back(ra, slot + c, sgn * 0.5 * coef / m.Bx);
                    w2.emplace_back(rb, slot + c, -sgn * 0.5 * coef / m.Bx);
                }
            }
            for (int k = 0; k < 2; ++k) {
                w1.emplace_back(scrA + c, u + k, 1.0);
                w1.emplace_back(scrB + c, u + 2 + k, 1.0);
                w1.emplace_back(m.dst + c, u + k, scale);
                w1.emplace_back(m.dst + c, u + 2 + k, -scale);
            }
        }
        Layer l;
        l.tag = tag;
        l.has_ffn = true;
        l.ffn.W2 = sparse(h, D, w2);
        l.ffn.W1 = sparse(D, h, w1);
        l.ffn.b2 = VectorXd::Zero(h);
        l.ffn.b1 = VectorXd::Zero(D);
        out.push_back(std::move(l));
    }
    for (int s = 1; s <= depth; ++s) {
        std::vector<Trip> w2, w1;
        VectorXd b2(6 * m.width);
        const double out_coef = -scale / std::pow(4.0, s);
        const bool last = s == depth;
        for (int c = 0; c < m.width; ++c) {
            for (int which = 0; which < 2; ++which) {
                const int base = 6 * c + 3 * which;
                const int src = (which == 0 ? scrA : scrB) + c;
                const double sign = which == 0 ? 1.0 : -1.0;
                const double tooth[3] = {2.0, -4.0, 2.0};
                const double shift[3] = {0.0, -0.5, -1.0};
                for (int k = 0; k < 3; ++k) {
                    w2.emplace_back(base + k, src, 1.0);
                    b2(base + k) = shift[k];
                    w1.emplace_back(m.dst + c, base + k, sign * out_coef * tooth[k]);
                    // scratch becomes g(y), or 0 on the last layer
                    double upd = last ? 0.0 : tooth[k];
                    if (k == 0) upd -= 1.0;
                    if (upd != 0.0) w1.emplace_back(src, base + k, upd);
                }
            }
        }
        Layer l;
        l.tag = tag;
        l.has_ffn = true;
        l.ffn.W2 = sparse(6 * m.width, D, w2);
        l.ffn.W1 = sparse(D, 6 * m.width, w1);
        l.ffn.b2 = b2;
        l.ffn.b1 = VectorXd::Zero(D);
        out.push_back(std::move(l));
    }
    return out;
}

}  // namespace

double trapezoid(double u, double Delta) {
    return 8.0 / Delta *
           (relu(u + Delta / 4) - relu(u + Delta / 8) - relu(u - Delta / 8) + relu(u - Delta / 4));
}

MatrixXd Layer::apply(const MatrixXd& Y) const {
    MatrixXd Z = Y;
    for (const auto& h : heads) {
        MatrixXd QY = h.Q * Y, KY = h.K * Y;
        MatrixXd A = (QY.transpose() * KY).cwiseMax(0.0);
        Z.noalias() += (h.V * Y) * A;
    }
    if (has_ffn) {
        MatrixXd hid = ((ffn.W2 * Z).colwise() + ffn.b2).cwiseMax(0.0);
        MatrixXd delta = ffn.W1 * hid;
        Z += delta.colwise() + ffn.b1;
    }
    if (has_product) {
        const auto& p = product;
        for (int c = 0; c < p.width; ++c) {
            Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(Z.cols());
            for (auto [slot, coef] : p.src) x += coef * Z.row(slot + c);
            Z.row(p.dst + c) += Z.row(p.w_row).cwiseProduct(x);
        }
    }
    return Z;
}

double Layer::max_weight_norm() const {
    double m = 0.0;
    for (const auto& h : heads) m = std::max({m, h.Q.norm(), h.K.norm(), h.V.norm()});
    if (has_ffn) m = std::max({m, ffn.W1.norm(), ffn.W2.norm(), ffn.b1.norm(), ffn.b2.norm()});
    return m;
}

TokenLayout TokenLayout::make(int d, int de) {
    TokenLayout l;
    l.d = d;
    l.de = de;
    l.X = 0;
    l.E = d;
    l.PHI = d + de;
    const int b = d + de + 4;
    l.S = b;
    l.U = b + d;
    l.BV = b + 2 * d;
    l.R = b + 3 * d;
    l.MU = b + 4 * d;
    l.EB = b + 5 * d;
    l.FLAG = b + 6 * d;
    l.XO = l.FLAG + 3;
    l.P = l.XO + d;
    l.Q = l.XO + 2 * d;
    l.CT = l.XO + 3 * d;
    l.MS = l.XO + 4 * d;
    l.D = l.XO + 5 * d;
    return l;
}

nlohmann::json TokenLayout::to_json() const {
    return {{"D", D},   {"x", X},   {"e", E},   {"phi", PHI}, {"flags", FLAG}, {"x_obs_copy", XO},
            {"s", S},   {"u", U},   {"b", BV},  {"eta_v", R}, {"mu", MU},      {"eta_s", EB},
            {"p", P},   {"q", Q},   {"cort", CT}, {"miss", MS}};
}

ReluMultiplier::ReluMultiplier(double Bw, double Bx, double eps_mult) {
    if (!(Bw > 0 && Bx > 0 && eps_mult > 0)) throw std::invalid_argument("ReluMultiplier: bad range");
    // rows: w, x, out, scratch a, scratch b
    MultSite site{0, {{1, 1.0}}, 2, 1, Bw, Bx};
    layers_ = relu_mult_layers(5, site, 3, 4, eps_mult, "mult");
    const int m = mult_depth(Bw, Bx, eps_mult);
    bound_ = Bw * Bx * std::pow(2.0, -2.0 * m - 1.0);
}

int ReluMultiplier::required_depth(double Bw, double Bx, double eps_mult) {
    return mult_depth(Bw, Bx, eps_mult) + 1;
}

double ReluMultiplier::operator()(double w, double x) const {
    MatrixXd Y = MatrixXd::Zero(5, 1);
    Y(0, 0) = w;
    Y(1, 0) = x;
    for (const auto& l : layers_) Y = l.apply(Y);
    return Y(2, 0);
}

namespace {

struct Builder {
    const TokenLayout& L;
    int H;
    double Delta, r2, pen;
    std::vector<double> fm2;    // f(m)^2
    std::vector<double> gamma;  // kernel at gap m
    MatrixXd Lambda;
    std::vector<std::shared_ptr<const Layer>>& layers;
    MultMode mode;
    double eps_mult;

    // 4 heads per gap; source tokens of type src write coef * gamma_m * Lambda * y[src_slot]
    // into dst_slot of target tokens of type tgt.
    std::vector<AttentionHead> pattern(int src_type, int tgt_type, int src_slot, int dst_slot, double coef) const {
        const double shifts[4] = {Delta / 4, Delta / 8, -Delta / 8, -Delta / 4};
        const double w[4] = {1.0, -1.0, -1.0, 1.0};
        const int d = L.d;
        std::vector<Trip> q;
        for (int k = 0; k < L.de; ++k) q.emplace_back(L.E + k, L.E + k, 1.0);
        q.emplace_back(L.FLAG, L.FLAG, 1.0);
        q.emplace_back(L.FLAG + 1, L.FLAG + src_type, 1.0);
        SpMat Q = sparse(L.D, L.D, q);
        std::vector<AttentionHead> heads;
        for (int m = 0; m < H; ++m) {
            for (int a = 0; a < 4; ++a) {
                std::vector<Trip> kt, vt;
                for (int k = 0; k < L.de; ++k) kt.emplace_back(L.E + k, L.E + k, 1.0);
                kt.emplace_back(L.FLAG, L.FLAG, -r2 + 0.5 * fm2[(std::size_t)m] + shifts[a] - pen);
                kt.emplace_back(L.FLAG + 1, L.FLAG + tgt_type, pen);
                const double scale = w[a] * 8.0 / Delta * coef * gamma[(std::size_t)m];
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j)
                        if (Lambda(i, j) != 0.0) vt.emplace_back(dst_slot + i, src_slot + j, scale * Lambda(i, j));
                heads.push_back({Q, sparse(L.D, L.D, kt), sparse(L.D, L.D, vt)});
            }
        }
        return heads;
    }

    void push(Layer l) { layers.push_back(std::make_shared<const Layer>(std::move(l))); }

    void mult(const MultSite& site, const std::string& tag) {
        if (mode == MultMode::idealized) {
            Layer l;
            l.tag = tag;
            l.has_product = true;
            l.product = {site.w_row, site.src, site.dst, site.width};
            push(std::move(l));
        } else {
            for (auto& l : relu_mult_layers(L.D, site, L.CT, L.MS, eps_mult, tag)) push(std::move(l));
        }
    }
};

}  // namespace

UnrolledTransformer build_unrolled_transformer(const GpSpec& spec, const Mask& mask, const DiffusionSchedule& sch,
                                               double eps, const UnrolledBuildOptions& opt) {
    if (spec.embedding.kind != EmbeddingSpec::Kind::sinusoidal)
        throw std::invalid_argument("unrolled transformer needs a sinusoidal embedding");
    if (spec.mean.size() && spec.mean.cwiseAbs().maxCoeff() != 0.0)
        throw std::invalid_argument("unrolled transformer assumes a zero mean");
    sch.validate();
    UnrolledTransformer net;
    net.H_ = spec.H;
    net.sch_ = sch;
    net.mode_ = opt.mode;
    net.cond_ = std::make_shared<const ConditionalGaussian>(spec, mask);
    const auto& cond = *net.cond_;
    net.spec_sum_ = spectral_summary(cond, default_c_data(spec));
    const auto& ss = net.spec_sum_;
    const int d = spec.d;
    net.lay_ = TokenLayout::make(d, spec.embedding.dim());
    const auto& L = net.lay_;

    // iteration counts: worst case over a log grid of t
    const double eps_gd = opt.mode == MultMode::relu ? 0.5 * eps : eps;
    std::vector<double> tgrid;
    for (int i = 0; i <= 200; ++i) tgrid.push_back(sch.t0 * std::pow(sch.T / sch.t0, i / 200.0));
    net.gd_ = recommend_iterations(ss, sch, sch.t0, eps_gd);
    for (double t : tgrid) {
        auto c = recommend_iterations(ss, sch, t, eps_gd);
        net.gd_.K = std::max(net.gd_.K, c.K);
        net.gd_.K_aux = std::max(net.gd_.K_aux, c.K_aux);
    }
    net.gd_.eps = eps;
    const int K = net.gd_.K, Kaux = net.gd_.K_aux;
    const double theta = net.gd_.theta;

    // aux map and the later-step operator used by the ledger
    {
        auto eo = sym_eig(cond.Sigma_obs());
        VectorXd g(eo.values.size());
        for (Eigen::Index i = 0; i < g.size(); ++i)
            g(i) = (1.0 - std::pow(1.0 - theta * eo.values(i), Kaux)) / eo.values(i);
        net.aux_norm_ = g.cwiseAbs().maxCoeff();
        MatrixXd A = eo.vectors * g.asDiagonal() * eo.vectors.transpose();
        net.LP_ = symmetrize(-cond.Sigma_miss() + cond.Sigma_cor().transpose() * A * cond.Sigma_cor());
    }

    net.delta_ = spec.embedding.delta(spec.H);
    net.r_ = spec.embedding.r;
    net.emb_ = spec.embedding.coordinates(spec.H);

    // ranges seen by each product site
    const double eta_max = std::max(major_step_size(ss, sch.t0), major_step_size(ss, sch.T));
    const double s2_0 = DiffusionSchedule::sigma2(sch.t0);
    const double s_bound = ss.c_sigma * ss.c_data / s2_0;
    const double Bs = 2.0 * (2.0 * s_bound + eps / std::sqrt(s2_0));
    const double Bv = ss.c_data;

    net.eps_mult_ = opt.eps_mult > 0 ? opt.eps_mult
                                     : eps / (8.0 * std::sqrt(d * spec.H) * (cond.Sigma_miss().norm() + 2.0));
    if (opt.mode == MultMode::relu) {
        double worst = 0.0;
        for (double t : tgrid) worst = std::max(worst, net.relu_ledger(t) / (0.5 * eps / DiffusionSchedule::sigma(t)));
        if (worst > 1.0) {
            const double need = net.eps_mult_ / worst;
            const int depth = ReluMultiplier::required_depth(1.0, eta_max * Bs, need);
            if (opt.eps_mult > 0) {
                std::ostringstream os;
                os << "precision budget infeasible: eps_mult " << opt.eps_mult << " exceeds " << need
                   << ", required multiplier depth " << depth;
                throw BudgetError(os.str(), depth);
            }
            net.eps_mult_ = need;
        }
    }

    std::vector<double> fm2, gamma;
    for (int m = 0; m < spec.H; ++m) {
        fm2.push_back(spec.embedding.f(m) * spec.embedding.f(m));
        gamma.push_back(spec.kernel(spec.embedding.f(m)));
    }
    const double r2 = net.r_ * net.r_;
    const double pen = 0.5 * fm2.back() + net.delta_;
    Builder b{L, spec.H, net.delta_, r2, pen, fm2, gamma, spec.Lambda, net.layers_, opt.mode, net.eps_mult_};
    const int OBS = 1, MISS = 2;
    const int ETA = L.PHI, ALPHA = L.PHI + 1, SIG2 = L.PHI + 2, ALPHA2 = L.PHI + 3;

    // shared auxiliary block: u <- u - theta Sigma_obs u + theta b
    std::shared_ptr<const Layer> aux;
    {
        Layer l;
        l.tag = "aux";
        l.heads = b.pattern(OBS, OBS, L.U, L.U, -theta);
        LinearFfn f(L.D);
        f.add_slot(L.U, L.BV, theta, d);
        Layer fl = f.build("aux");
        l.has_ffn = true;
        l.ffn = fl.ffn;
        aux = std::make_shared<const Layer>(std::move(l));
    }

    // first major step
    b.mult({ETA, {{L.X, 1.0}, {L.XO, -1.0}}, L.R, d, eta_max, Bv}, "first.mult");
    b.mult({ETA, {{L.XO, 1.0}}, L.EB, d, eta_max, Bv}, "first.mult");
    b.mult({ALPHA, {{L.EB, 1.0}}, L.BV, d, 1.0, eta_max * Bv}, "first.mult");
    {
        LinearFfn f(L.D);
        f.clear_slot(L.EB, d);
        b.push(f.build("first.clear"));
    }
    for (int j = 0; j < Kaux; ++j) net.layers_.push_back(aux);
    {
        Layer l;
        l.tag = "first.cort";
        l.heads = b.pattern(OBS, MISS, L.U, L.MU, 1.0);
        LinearFfn f(L.D);
        f.add_slot(L.S, L.MU, 1.0, d);
        f.add_slot(L.S, L.R, -1.0, d);
        f.clear_slot(L.U, d);
        f.clear_slot(L.BV, d);
        l.has_ffn = true;
        l.ffn = f.build("").ffn;
        b.push(std::move(l));
    }

    // later major steps share weights
    std::vector<std::shared_ptr<const Layer>> step;
    {
        std::vector<std::shared_ptr<const Layer>> saved;
        saved.swap(net.layers_);
        b.mult({ETA, {{L.S, 1.0}}, L.EB, d, eta_max, Bs}, "step.mult");
        b.mult({ALPHA2, {{L.EB, 1.0}}, L.P, d, 1.0, eta_max * Bs}, "step.mult");
        b.mult({SIG2, {{L.EB, 1.0}}, L.Q, d, 1.0, eta_max * Bs}, "step.mult");
        {
            Layer l;
            l.tag = "step.cor";
            l.heads = b.pattern(MISS, OBS, L.P, L.BV, 1.0);
            LinearFfn f(L.D);
            f.clear_slot(L.EB, d);
            l.has_ffn = true;
            l.ffn = f.build("").ffn;
            b.push(std::move(l));
        }
        for (int j = 0; j < Kaux; ++j) net.layers_.push_back(aux);
        {
            Layer l;
            l.tag = "step.cort";
            l.heads = b.pattern(OBS, MISS, L.U, L.CT, 1.0);
            b.push(std::move(l));
        }
        {
            Layer l;
            l.tag = "step.miss";
            l.heads = b.pattern(MISS, MISS, L.P, L.MS, 1.0);
            LinearFfn f(L.D);
            f.add_slot(L.S, L.Q, -1.0, d);
            f.add_slot(L.S, L.MS, -1.0, d);
            f.add_slot(L.S, L.CT, 1.0, d);
            f.add_slot(L.S, L.R, -1.0, d);
            f.add_slot(L.S, L.MU, 1.0, d);
            for (int slot : {L.U, L.BV, L.P, L.Q, L.CT, L.MS}) f.clear_slot(slot, d);
            l.has_ffn = true;
            l.ffn = f.build("").ffn;
            b.push(std::move(l));
        }
        step.swap(net.layers_);
        net.layers_.swap(saved);
    }
    for (int k = 1; k < K; ++k) net.layers_.insert(net.layers_.end(), step.begin(), step.end());

    // a priori weight bound of this construction
    {
        const double kmax = r2 + pen + net.delta_ / 4;
        double B = std::max({std::sqrt(L.de + 2.0), std::sqrt(L.de + kmax * kmax + pen * pen),
                             8.0 / net.delta_ * std::max(theta, 1.0) * spec.Lambda.norm()});
        B = std::max({B, std::sqrt(22.0 * d) * std::max(theta, 1.0), std::sqrt(2.0 * L.D)});
        if (opt.mode == MultMode::relu) {
            const double scale = eta_max * Bs;
            B = std::max({B, std::sqrt(12.0 * d) * 0.5 * std::max({1.0, 1.0 / eta_max, 1.0 / Bv}),
                          std::sqrt(4.0 * d * (1.0 + scale * scale)), std::sqrt(6.0 * d * (scale * scale + 16.0))});
        }
        net.B_ = B;
    }
    return net;
}

MatrixXd UnrolledTransformer::encode(const ScoreQuery& q) const {
    const auto& m = cond_->mask();
    const int d = lay_.d;
    if (q.x_obs.size() != cond_->m_obs() || q.v_t.size() != cond_->m_miss())
        throw std::invalid_argument("forward: query dimensions do not match the network's mask family");
    if (q.t < sch_.t0 * (1.0 - 1e-12)) throw std::domain_error("below early-stop time");
    MatrixXd Y = MatrixXd::Zero(lay_.D, H_);
    const double eta = major_step_size(spec_sum_, q.t);
    int io = 0, im = 0;
    for (int i = 0; i < H_; ++i) {
        Y.block(lay_.E, i, lay_.de, 1) = emb_.row(i).transpose();
        Y(lay_.PHI, i) = eta;
        Y(lay_.PHI + 1, i) = DiffusionSchedule::alpha(q.t);
        Y(lay_.PHI + 2, i) = DiffusionSchedule::sigma2(q.t);
        Y(lay_.PHI + 3, i) = DiffusionSchedule::alpha2(q.t);
        Y(lay_.FLAG, i) = 1.0;
        if (m.observed(i)) {
            Y.block(lay_.X, i, d, 1) = q.x_obs.segment(io * d, d);
            Y.block(lay_.XO, i, d, 1) = q.x_obs.segment(io * d, d);
            Y(lay_.FLAG + 1, i) = 1.0;
            ++io;
        } else {
            Y.block(lay_.X, i, d, 1) = q.v_t.segment(im * d, d);
            Y(lay_.FLAG + 2, i) = 1.0;
            ++im;
        }
    }
    return Y;
}

double UnrolledTransformer::clip_radius(double t) const {
    return spec_sum_.c_sigma * spec_sum_.c_data / DiffusionSchedule::sigma2(t);
}

VectorXd UnrolledTransformer::decode(const MatrixXd& Y, double t) const {
    const auto& miss = cond_->mask().miss();
    const int d = lay_.d;
    VectorXd s(static_cast<Eigen::Index>(miss.size()) * d);
    for (std::size_t j = 0; j < miss.size(); ++j)
        s.segment(static_cast<Eigen::Index>(j) * d, d) = Y.block(lay_.S, miss[j], d, 1);
    const double R = clip_radius(t), n = s.norm();
    if (n > R) s *= R / n;
    return s;
}

VectorXd UnrolledTransformer::forward(const ScoreQuery& q, const Observer& obs) const {
    MatrixXd Y = encode(q);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Y = layers_[i]->apply(Y);
        if (!Y.allFinite()) throw std::runtime_error("forward: non-finite activation at layer " + std::to_string(i));
        if (obs) obs(i, layers_[i]->tag, Y);
    }
    return decode(Y, q.t);
}

double UnrolledTransformer::relu_ledger(double t) const {
    if (mode_ == MultMode::idealized) return 0.0;
    const double a2 = DiffusionSchedule::alpha2(t), s2 = DiffusionSchedule::sigma2(t);
    const double eta = major_step_size(spec_sum_, t);
    const double em = eps_mult_;
    const double no = std::sqrt(double(cond_->m_obs())), nm = std::sqrt(double(cond_->m_miss()));
    const double lp = spectral_norm(LP_);
    const double c1 = spec_sum_.cor_norm * aux_norm_ * 2.0 * no * em + nm * em;
    const double xi = (s2 + 1.0 + lp * (a2 + 1.0)) * nm * em + c1;
    const MatrixXd M = MatrixXd::Identity(LP_.rows(), LP_.cols()) - eta * (s2 * MatrixXd::Identity(LP_.rows(), LP_.cols()) - a2 * LP_);
    const double mn = spectral_norm(M);
    double geo = 0.0, pw = 1.0;
    for (int j = 0; j + 1 < gd_.K; ++j) {
        geo += pw;
        pw *= mn;
    }
    return pw * c1 + xi * geo;
}

double UnrolledTransformer::reference_scale() const {
    const double d = lay_.d;
    return std::sqrt(H_ * d * d * d) *
           (r_ * r_ + spec_sum_.obs_max / spec_sum_.obs_min / DiffusionSchedule::sigma(sch_.t0));
}

nlohmann::json UnrolledTransformer::metadata() const {
    std::vector<int> heads;
    int M = 0;
    double maxw = 0.0;
    for (const auto& l : layers_) {
        heads.push_back(static_cast<int>(l->heads.size()));
        M = std::max(M, heads.back());
        maxw = std::max(maxw, l->max_weight_norm());
    }
    return {{"D", lay_.D},
            {"L", layers_.size()},
            {"M", M},
            {"B", B_},
            {"max_weight_norm", maxw},
            {"reference_scale", reference_scale()},
            {"R_t0", clip_radius(sch_.t0)},
            {"R_T", clip_radius(sch_.T)},
            {"K", gd_.K},
            {"K_aux", gd_.K_aux},
            {"theta", gd_.theta},
            {"eps", gd_.eps},
            {"eps_mult", eps_mult_},
            {"mode", mode_ == MultMode::idealized ? "idealized_mult" : "relu_mult"},
            {"Delta", delta_},
            {"r", r_},
            {"H", H_},
            {"layout", lay_.to_json()},
            {"heads_per_layer", heads}};
}

BoundScore UnrolledScoreFn::bind(const ObservedContext& ctx) const {
    if (!(ctx.mask == net_->mask())) throw std::invalid_argument("unrolled network was built for a different mask");
    auto net = net_;
    VectorXd x = ctx.x_obs;
    return [net, x](const MatrixXd& v, double t) {
        MatrixXd out(v.rows(), v.cols());
        for (Eigen::Index j = 0; j < v.cols(); ++j) out.col(j) = net->forward({v.col(j), x, t});
        return out;
    };
}

NestedGdConfig UnrolledTransformer::gd_at(double t) const {
    NestedGdConfig c = gd_;
    c.eta = major_step_size(spec_sum_, t);
    c.t = t;
    return c;
}

BisimulationReport bisimulate(const UnrolledTransformer& net, const ScoreQuery& q) {
    const ConditionalGaussian& cond = net.cond();
    const Mask& m = cond.mask();
    NestedGdConfig cfg = net.gd_at(q.t);
    NestedGdOptions opt;
    opt.record_aux = true;
    NestedGdResult gd = nested_gd_score(cond, q, cfg, opt);
    const double a = DiffusionSchedule::alpha(q.t), a2 = DiffusionSchedule::alpha2(q.t);
    const TokenLayout& L = net.layout();
    const int d = cond.d();
    auto gather = [d](const MatrixXd& Y, int slot, const std::vector<int>& frames) {
        VectorXd v(static_cast<Eigen::Index>(frames.size()) * d);
        for (std::size_t i = 0; i < frames.size(); ++i)
            for (int c = 0; c < d; ++c) v(static_cast<Eigen::Index>(i) * d + c) = Y(slot + c, frames[i]);
        return v;
    };
    BisimulationReport r;
    int step = 0, aux_j = 0;
    r.output = net.forward(q, [&](std::size_t, const std::string& tag, const MatrixXd& Y) {
        if (tag == "aux") {
            ++aux_j;
            ++r.aux_steps;
            VectorXd want = step == 0 ? VectorXd(cfg.eta * a * gd.mu_aux[static_cast<std::size_t>(aux_j)])
                                      : VectorXd(cfg.eta * a2 * gd.aux[static_cast<std::size_t>(step)][static_cast<std::size_t>(aux_j)]);
            r.max_dev = std::max(r.max_dev, (gather(Y, L.U, m.obs()) - want).cwiseAbs().maxCoeff());
        } else if (tag == "first.cort" || tag == "step.miss") {
            ++step;
            aux_j = 0;
            r.max_dev = std::max(r.max_dev, (gather(Y, L.S, m.miss()) - gd.iterates[static_cast<std::size_t>(step)])
                                                .cwiseAbs()
                                                .maxCoeff());
        }
    });
    r.major_steps = step;
    r.gd_output = gd.s;
    return r;
}

}  // namespace gpimpute
