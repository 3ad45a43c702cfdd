#include "certain/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "certain/rng.hpp"
#include "certain/util.hpp"

namespace certain::net {

namespace {
inline int conv_out(int n) { return (n - 1) / 2 + 1; }  // 3x3 kernel, stride 2, pad 1
}

FusionNet::FusionNet(const NetConfig& cfg) : cfg_(cfg) {
    if (cfg.t < 1 || cfg.f < 1 || cfg.h < 4 || cfg.w < 4 || cfg.d_embed < 1 || cfg.conv1 < 1 ||
        cfg.conv2 < 1)
        throw config_error("invalid net dimensions");
    h1_ = conv_out(cfg.h);
    w1_ = conv_out(cfg.w);
    h2_ = conv_out(h1_);
    w2_ = conv_out(w1_);
    flat_ = cfg.conv2 * h2_ * w2_;

    int off = 0;
    auto add = [&](const std::string& name, std::vector<int> shape) {
        TensorSpec t{name, off, std::move(shape)};
        off += t.size();
        tensors_.push_back(std::move(t));
        return tensors_.back().offset;
    };
    const int d = cfg.d_embed;
    wr_off_ = add("seq.w_reset", {d, cfg.f});
    ur_off_ = add("seq.u_reset", {d, d});
    br_off_ = add("seq.b_reset", {d});
    wz_off_ = add("seq.w_update", {d, cfg.f});
    uz_off_ = add("seq.u_update", {d, d});
    bz_off_ = add("seq.b_update", {d});
    wn_off_ = add("seq.w_cand", {d, cfg.f});
    un_off_ = add("seq.u_cand", {d, d});
    bn_off_ = add("seq.b_cand", {d});
    c1w_off_ = add("img.conv1_w", {cfg.conv1, 1, 3, 3});
    c1b_off_ = add("img.conv1_b", {cfg.conv1});
    c2w_off_ = add("img.conv2_w", {cfg.conv2, cfg.conv1, 3, 3});
    c2b_off_ = add("img.conv2_b", {cfg.conv2});
    fcw_off_ = add("img.fc_w", {d, flat_});
    fcb_off_ = add("img.fc_b", {d});
    head_w_off_ = add("head.w", {2 * d});
    head_b_off_ = add("head.b", {1});
    n_params_ = off;
}

std::vector<double> FusionNet::init_params(uint64_t seed) const {
    std::vector<double> p(static_cast<size_t>(n_params_));
    Rng rng(derive_seed(seed, hash_str("net_init")));
    const int d = cfg_.d_embed;
    for (const auto& t : tensors_) {
        int fan_in;
        if (t.name.starts_with("seq.w_")) fan_in = cfg_.f;
        else if (t.name.starts_with("seq.")) fan_in = d;
        else if (t.name.starts_with("img.conv1")) fan_in = 9;
        else if (t.name.starts_with("img.conv2")) fan_in = cfg_.conv1 * 9;
        else if (t.name.starts_with("img.fc")) fan_in = flat_;
        else fan_in = 2 * d;
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int i = 0; i < t.size(); ++i)
            p[static_cast<size_t>(t.offset + i)] = rng.uniform(-bound, bound);
    }
    return p;
}

ForwardOutput FusionNet::forward(std::span<const double> params, const Mat& seq, const Mat& img,
                                 ForwardCache* cache) const {
    if (seq.rows != cfg_.t || seq.cols != cfg_.f)
        throw shape_error("sequence shape " + std::to_string(seq.rows) + "x" +
                          std::to_string(seq.cols) + " does not match net (" +
                          std::to_string(cfg_.t) + "x" + std::to_string(cfg_.f) + ")");
    if (img.rows != cfg_.h || img.cols != cfg_.w)
        throw shape_error("image shape " + std::to_string(img.rows) + "x" +
                          std::to_string(img.cols) + " does not match net (" +
                          std::to_string(cfg_.h) + "x" + std::to_string(cfg_.w) + ")");
    if (static_cast<int>(params.size()) != n_params_)
        throw shape_error("parameter vector size mismatch");

    const int d = cfg_.d_embed, f = cfg_.f, t_steps = cfg_.t;
    const double* wr = params.data() + wr_off_;
    const double* ur = params.data() + ur_off_;
    const double* br = params.data() + br_off_;
    const double* wz = params.data() + wz_off_;
    const double* uz = params.data() + uz_off_;
    const double* bz = params.data() + bz_off_;
    const double* wn = params.data() + wn_off_;
    const double* un = params.data() + un_off_;
    const double* bn = params.data() + bn_off_;

    std::vector<double> h(static_cast<size_t>(d), 0.0);
    std::vector<double> emb_ehr(static_cast<size_t>(d), 0.0);
    std::vector<double> r(static_cast<size_t>(d)), z(static_cast<size_t>(d)),
        n(static_cast<size_t>(d)), q(static_cast<size_t>(d));
    if (cache) {
        cache->seq = seq;
        cache->img = img;
        cache->hs.assign(static_cast<size_t>(t_steps + 1) * d, 0.0);
        cache->rs.assign(static_cast<size_t>(t_steps) * d, 0.0);
        cache->zs.assign(static_cast<size_t>(t_steps) * d, 0.0);
        cache->ns.assign(static_cast<size_t>(t_steps) * d, 0.0);
        cache->qs.assign(static_cast<size_t>(t_steps) * d, 0.0);
    }
    for (int t = 0; t < t_steps; ++t) {
        const double* x = seq.row(t);
        for (int i = 0; i < d; ++i) {
            const double* wri = wr + static_cast<size_t>(i) * f;
            const double* wzi = wz + static_cast<size_t>(i) * f;
            double ar = br[i], az = bz[i];
            for (int j = 0; j < f; ++j) {
                ar += wri[j] * x[j];
                az += wzi[j] * x[j];
            }
            const double* uri = ur + static_cast<size_t>(i) * d;
            const double* uzi = uz + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                ar += uri[j] * h[static_cast<size_t>(j)];
                az += uzi[j] * h[static_cast<size_t>(j)];
            }
            r[static_cast<size_t>(i)] = sigmoid(ar);
            z[static_cast<size_t>(i)] = sigmoid(az);
        }
        for (int j = 0; j < d; ++j) q[static_cast<size_t>(j)] = r[static_cast<size_t>(j)] * h[static_cast<size_t>(j)];
        for (int i = 0; i < d; ++i) {
            const double* wni = wn + static_cast<size_t>(i) * f;
            const double* uni = un + static_cast<size_t>(i) * d;
            double an = bn[i];
            for (int j = 0; j < f; ++j) an += wni[j] * x[j];
            for (int j = 0; j < d; ++j) an += uni[j] * q[static_cast<size_t>(j)];
            n[static_cast<size_t>(i)] = std::tanh(an);
        }
        for (int i = 0; i < d; ++i) {
            double hi = (1.0 - z[static_cast<size_t>(i)]) * h[static_cast<size_t>(i)] +
                        z[static_cast<size_t>(i)] * n[static_cast<size_t>(i)];
            h[static_cast<size_t>(i)] = hi;
            emb_ehr[static_cast<size_t>(i)] += hi;
        }
        if (cache) {
            std::memcpy(cache->rs.data() + static_cast<size_t>(t) * d, r.data(), sizeof(double) * d);
            std::memcpy(cache->zs.data() + static_cast<size_t>(t) * d, z.data(), sizeof(double) * d);
            std::memcpy(cache->ns.data() + static_cast<size_t>(t) * d, n.data(), sizeof(double) * d);
            std::memcpy(cache->qs.data() + static_cast<size_t>(t) * d, q.data(), sizeof(double) * d);
            std::memcpy(cache->hs.data() + static_cast<size_t>(t + 1) * d, h.data(), sizeof(double) * d);
        }
    }
    for (double& e : emb_ehr) e /= static_cast<double>(t_steps);

    // image encoder
    const int c1 = cfg_.conv1, c2 = cfg_.conv2;
    const double* c1w = params.data() + c1w_off_;
    const double* c1b = params.data() + c1b_off_;
    const double* c2w = params.data() + c2w_off_;
    const double* c2b = params.data() + c2b_off_;
    std::vector<double> t1(static_cast<size_t>(c1) * h1_ * w1_);
    for (int c = 0; c < c1; ++c) {
        const double* wk = c1w + static_cast<size_t>(c) * 9;
        for (int y = 0; y < h1_; ++y) {
            for (int x = 0; x < w1_; ++x) {
                double s = c1b[c];
                for (int ky = 0; ky < 3; ++ky) {
                    int sy = 2 * y + ky - 1;
                    if (sy < 0 || sy >= cfg_.h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int sx = 2 * x + kx - 1;
                        if (sx < 0 || sx >= cfg_.w) continue;
                        s += wk[ky * 3 + kx] * img(sy, sx);
                    }
                }
                t1[(static_cast<size_t>(c) * h1_ + y) * w1_ + x] = std::tanh(s);
            }
        }
    }
    std::vector<double> t2(static_cast<size_t>(c2) * h2_ * w2_);
    for (int c = 0; c < c2; ++c) {
        for (int y = 0; y < h2_; ++y) {
            for (int x = 0; x < w2_; ++x) {
                double s = c2b[c];
                for (int ci = 0; ci < c1; ++ci) {
                    const double* wk = c2w + (static_cast<size_t>(c) * c1 + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = 2 * y + ky - 1;
                        if (sy < 0 || sy >= h1_) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = 2 * x + kx - 1;
                            if (sx < 0 || sx >= w1_) continue;
                            s += wk[ky * 3 + kx] * t1[(static_cast<size_t>(ci) * h1_ + sy) * w1_ + sx];
                        }
                    }
                }
                t2[(static_cast<size_t>(c) * h2_ + y) * w2_ + x] = std::tanh(s);
            }
        }
    }
    const double* fcw = params.data() + fcw_off_;
    const double* fcb = params.data() + fcb_off_;
    std::vector<double> emb_cxr(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        const double* row = fcw + static_cast<size_t>(i) * flat_;
        double s = fcb[i];
        for (int j = 0; j < flat_; ++j) s += row[j] * t2[static_cast<size_t>(j)];
        emb_cxr[static_cast<size_t>(i)] = s;
    }

    const double* hw = params.data() + head_w_off_;
    double logit = params[static_cast<size_t>(head_b_off_)];
    for (int i = 0; i < d; ++i) logit += hw[i] * emb_ehr[static_cast<size_t>(i)];
    for (int i = 0; i < d; ++i) logit += hw[d + i] * emb_cxr[static_cast<size_t>(i)];

    ForwardOutput out;
    out.logit = logit;
    out.prob = sigmoid(logit);
    out.emb_ehr = emb_ehr;
    out.emb_cxr = emb_cxr;
    if (cache) {
        cache->t1 = std::move(t1);
        cache->t2 = std::move(t2);
        cache->emb_ehr = out.emb_ehr;
        cache->emb_cxr = out.emb_cxr;
        cache->logit = logit;
        cache->prob = out.prob;
    }
    return out;
}

void FusionNet::backward(std::span<const double> params, const ForwardCache& cache, double d_logit,
                         std::span<const double> d_emb_ehr, std::span<const double> d_emb_cxr,
                         std::span<double> grad) const {
    if (static_cast<int>(grad.size()) != n_params_)
        throw shape_error("gradient vector size mismatch");
    const int d = cfg_.d_embed, f = cfg_.f, t_steps = cfg_.t;
    const double* hw = params.data() + head_w_off_;

    std::vector<double> de(static_cast<size_t>(d), 0.0), dc(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < d; ++i) {
        de[static_cast<size_t>(i)] = (d_emb_ehr.empty() ? 0.0 : d_emb_ehr[static_cast<size_t>(i)]) +
                                     d_logit * hw[i];
        dc[static_cast<size_t>(i)] = (d_emb_cxr.empty() ? 0.0 : d_emb_cxr[static_cast<size_t>(i)]) +
                                     d_logit * hw[d + i];
        grad[static_cast<size_t>(head_w_off_ + i)] += d_logit * cache.emb_ehr[static_cast<size_t>(i)];
        grad[static_cast<size_t>(head_w_off_ + d + i)] += d_logit * cache.emb_cxr[static_cast<size_t>(i)];
    }
    grad[static_cast<size_t>(head_b_off_)] += d_logit;

    // ---- sequence encoder (BPTT) ----
    const double* ur = params.data() + ur_off_;
    const double* uz = params.data() + uz_off_;
    const double* un = params.data() + un_off_;
    std::vector<double> dh(static_cast<size_t>(d), 0.0);
    std::vector<double> dar(static_cast<size_t>(d)), daz(static_cast<size_t>(d)),
        dan(static_cast<size_t>(d)), dq(static_cast<size_t>(d));
    const double pool = 1.0 / static_cast<double>(t_steps);
    for (int t = t_steps - 1; t >= 0; --t) {
        const double* x = cache.seq.row(t);
        const double* h_prev = cache.hs.data() + static_cast<size_t>(t) * d;
        const double* r = cache.rs.data() + static_cast<size_t>(t) * d;
        const double* z = cache.zs.data() + static_cast<size_t>(t) * d;
        const double* n = cache.ns.data() + static_cast<size_t>(t) * d;
        const double* q = cache.qs.data() + static_cast<size_t>(t) * d;

        for (int i = 0; i < d; ++i) {
            double g = dh[static_cast<size_t>(i)] + pool * de[static_cast<size_t>(i)];
            double dz = g * (n[i] - h_prev[i]);
            double dn = g * z[i];
            dh[static_cast<size_t>(i)] = g * (1.0 - z[i]);  // becomes dh_prev
            dan[static_cast<size_t>(i)] = dn * (1.0 - n[i] * n[i]);
            daz[static_cast<size_t>(i)] = dz * z[i] * (1.0 - z[i]);
        }
        // candidate path: q = r .* h_prev
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += un[static_cast<size_t>(i) * d + j] * dan[static_cast<size_t>(i)];
            dq[static_cast<size_t>(j)] = s;
        }
        for (int i = 0; i < d; ++i) {
            double dr = dq[static_cast<size_t>(i)] * h_prev[i];
            dh[static_cast<size_t>(i)] += dq[static_cast<size_t>(i)] * r[i];
            dar[static_cast<size_t>(i)] = dr * r[i] * (1.0 - r[i]);
        }
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int i = 0; i < d; ++i) {
                s += uz[static_cast<size_t>(i) * d + j] * daz[static_cast<size_t>(i)];
                s += ur[static_cast<size_t>(i) * d + j] * dar[static_cast<size_t>(i)];
            }
            dh[static_cast<size_t>(j)] += s;
        }
        for (int i = 0; i < d; ++i) {
            double gr = dar[static_cast<size_t>(i)], gz = daz[static_cast<size_t>(i)],
                   gn = dan[static_cast<size_t>(i)];
            double* gwr = grad.data() + wr_off_ + static_cast<size_t>(i) * f;
            double* gwz = grad.data() + wz_off_ + static_cast<size_t>(i) * f;
            double* gwn = grad.data() + wn_off_ + static_cast<size_t>(i) * f;
            for (int j = 0; j < f; ++j) {
                gwr[j] += gr * x[j];
                gwz[j] += gz * x[j];
                gwn[j] += gn * x[j];
            }
            double* gur = grad.data() + ur_off_ + static_cast<size_t>(i) * d;
            double* guz = grad.data() + uz_off_ + static_cast<size_t>(i) * d;
            double* gun = grad.data() + un_off_ + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                gur[j] += gr * h_prev[j];
                guz[j] += gz * h_prev[j];
                gun[j] += gn * q[j];
            }
            grad[static_cast<size_t>(br_off_ + i)] += gr;
            grad[static_cast<size_t>(bz_off_ + i)] += gz;
            grad[static_cast<size_t>(bn_off_ + i)] += gn;
        }
    }

    // ---- image encoder ----
    const int c1 = cfg_.conv1, c2 = cfg_.conv2;
    const double* fcw = params.data() + fcw_off_;
    std::vector<double> dt2(static_cast<size_t>(flat_), 0.0);
    for (int i = 0; i < d; ++i) {
        double g = dc[static_cast<size_t>(i)];
        const double* row = fcw + static_cast<size_t>(i) * flat_;
        double* grow = grad.data() + fcw_off_ + static_cast<size_t>(i) * flat_;
        for (int j = 0; j < flat_; ++j) {
            grow[j] += g * cache.t2[static_cast<size_t>(j)];
            dt2[static_cast<size_t>(j)] += g * row[j];
        }
        grad[static_cast<size_t>(fcb_off_ + i)] += g;
    }
    const double* c2w = params.data() + c2w_off_;
    std::vector<double> dt1(static_cast<size_t>(c1) * h1_ * w1_, 0.0);
    for (int c = 0; c < c2; ++c) {
        for (int y = 0; y < h2_; ++y) {
            for (int x = 0; x < w2_; ++x) {
                size_t oi = (static_cast<size_t>(c) * h2_ + y) * w2_ + x;
                double t = cache.t2[oi];
                double da = dt2[oi] * (1.0 - t * t);
                if (da == 0.0) continue;
                grad[static_cast<size_t>(c2b_off_ + c)] += da;
                for (int ci = 0; ci < c1; ++ci) {
                    const double* wk = c2w + (static_cast<size_t>(c) * c1 + ci) * 9;
                    double* gwk = grad.data() + c2w_off_ + (static_cast<size_t>(c) * c1 + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = 2 * y + ky - 1;
                        if (sy < 0 || sy >= h1_) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = 2 * x + kx - 1;
                            if (sx < 0 || sx >= w1_) continue;
                            size_t si = (static_cast<size_t>(ci) * h1_ + sy) * w1_ + sx;
                            gwk[ky * 3 + kx] += da * cache.t1[si];
                            dt1[si] += da * wk[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    for (int c = 0; c < c1; ++c) {
        for (int y = 0; y < h1_; ++y) {
            for (int x = 0; x < w1_; ++x) {
                size_t oi = (static_cast<size_t>(c) * h1_ + y) * w1_ + x;
                double t = cache.t1[oi];
                double da = dt1[oi] * (1.0 - t * t);
                if (da == 0.0) continue;
                grad[static_cast<size_t>(c1b_off_ + c)] += da;
                double* gwk = grad.data() + c1w_off_ + static_cast<size_t>(c) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    int sy = 2 * y + ky - 1;
                    if (sy < 0 || sy >= cfg_.h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int sx = 2 * x + kx - 1;
                        if (sx < 0 || sx >= cfg_.w) continue;
                        gwk[ky * 3 + kx] += da * cache.img(sy, sx);
                    }
                }
            }
        }
    }
}

void save_checkpoint(const std::string& path, const FusionNet& net, std::span<const double> mu,
                     std::span<const double> log_var, const std::string& scope, int stoch_begin) {
    if (static_cast<int>(mu.size()) != net.param_count())
        throw shape_error("checkpoint mu size mismatch");
    if (!log_var.empty() &&
        static_cast<int>(log_var.size()) != net.param_count() - stoch_begin)
        throw shape_error("checkpoint log_var size must cover [stoch_begin, param_count)");
    nlohmann::ordered_json header;
    header["format"] = "certain-ckpt";
    header["version"] = 1;
    const auto& c = net.config();
    header["net"] = {{"T", c.t},     {"F", c.f},         {"H", c.h},         {"W", c.w},
                     {"d_embed", c.d_embed}, {"conv1", c.conv1}, {"conv2", c.conv2}};
    header["param_count"] = net.param_count();
    header["head_offset"] = net.head_offset();
    header["byte_order"] = "le";
    header["blocks"] = log_var.empty() ? nlohmann::ordered_json::array({"mu"})
                                       : nlohmann::ordered_json::array({"mu", "log_var"});
    header["scope"] = scope;
    header["stoch_begin"] = stoch_begin;
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& t : net.tensors())
        tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"shape", t.shape}});
    header["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path);
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(mu.data()),
              static_cast<std::streamsize>(mu.size() * sizeof(double)));
    if (!log_var.empty())
        out.write(reinterpret_cast<const char*>(log_var.data()),
                  static_cast<std::streamsize>(log_var.size() * sizeof(double)));
    if (!out) throw config_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read checkpoint " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw parse_error(path + ": missing header line");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": bad header: " + e.what());
    }
    Checkpoint ck;
    try {
        if (h.at("format").get<std::string>() != "certain-ckpt")
            throw parse_error(path + ": unknown checkpoint format tag");
        ck.net.t = h.at("net").at("T").get<int>();
        ck.net.f = h.at("net").at("F").get<int>();
        ck.net.h = h.at("net").at("H").get<int>();
        ck.net.w = h.at("net").at("W").get<int>();
        ck.net.d_embed = h.at("net").at("d_embed").get<int>();
        ck.net.conv1 = h.at("net").at("conv1").get<int>();
        ck.net.conv2 = h.at("net").at("conv2").get<int>();
        int n = h.at("param_count").get<int>();
        ck.scope = h.at("scope").get<std::string>();
        ck.stoch_begin = h.at("stoch_begin").get<int>();
        auto blocks = h.at("blocks").get<std::vector<std::string>>();
        ck.mu.resize(static_cast<size_t>(n));
        in.read(reinterpret_cast<char*>(ck.mu.data()),
                static_cast<std::streamsize>(ck.mu.size() * sizeof(double)));
        if (!in) throw parse_error(path + ": truncated mu block");
        if (blocks.size() > 1 && blocks[1] == "log_var") {
            int ns = n - ck.stoch_begin;
            ck.log_var.resize(static_cast<size_t>(ns));
            in.read(reinterpret_cast<char*>(ck.log_var.data()),
                    static_cast<std::streamsize>(ck.log_var.size() * sizeof(double)));
            if (!in) throw parse_error(path + ": truncated log_var block");
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path + ": bad header: " + e.what());
    }
    return ck;
}

}  // namespace certain::net
