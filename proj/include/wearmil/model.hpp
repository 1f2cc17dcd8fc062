#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "wearmil/bags.hpp"
#include "wearmil/cohort.hpp"
#include "wearmil/csv.hpp"
#include "wearmil/error.hpp"
#include "wearmil/rng.hpp"

namespace wearmil {

// Row-major dense matrix; vectors use cols == 1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

namespace detail {

// y = W x
inline void matvec(const Tensor& W, const double* x, double* y) {
  for (int r = 0; r < W.rows; ++r) {
    const double* wr = W.v.data() + static_cast<std::size_t>(r) * W.cols;
    double acc = 0.0;
    for (int c = 0; c < W.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// out += Wᵀ g
inline void matvec_t_add(const Tensor& W, const double* g, double* out) {
  for (int r = 0; r < W.rows; ++r) {
    const double* wr = W.v.data() + static_cast<std::size_t>(r) * W.cols;
    double gr = g[r];
    for (int c = 0; c < W.cols; ++c) out[c] += wr[c] * gr;
  }
}

// G += g xᵀ
inline void outer_add(Tensor& G, const double* g, const double* x) {
  for (int r = 0; r < G.rows; ++r) {
    double* gr = G.v.data() + static_cast<std::size_t>(r) * G.cols;
    double v = g[r];
    for (int c = 0; c < G.cols; ++c) gr[c] += v * x[c];
  }
}

inline bool all_finite(const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace detail

struct Linear {
  Tensor W;  // out × in
  Tensor b;  // out × 1
  Linear() = default;
  Linear(int out, int in) : W(out, in), b(out, 1) {}
};

struct ModelConfig {
  std::vector<Modality> modalities;
  std::vector<int> feature_dims;  // per modality
  std::vector<int> hidden_dims;   // per modality encoder hidden width
  int embed_dim = 128;
  int attn_dim = 64;
  int num_classes = kNumClasses;

  void validate() const {
    if (modalities.empty()) throw Error("model config: no modalities");
    if (feature_dims.size() != modalities.size() ||
        hidden_dims.size() != modalities.size())
      throw Error("model config: per-modality dims must align");
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      if (feature_dims[i] < 1 || hidden_dims[i] < 1)
        throw Error("model config: dims must be >= 1");
      for (std::size_t j = i + 1; j < modalities.size(); ++j)
        if (modalities[i] == modalities[j])
          throw Error("model config: duplicate modality");
    }
    if (embed_dim < 1 || attn_dim < 1)
      throw Error("model config: dims must be >= 1");
    if (num_classes != kNumClasses)
      throw Error("model config: class count is fixed at 3");
  }

  int encoder_index(Modality m) const {
    for (std::size_t i = 0; i < modalities.size(); ++i)
      if (modalities[i] == m) return static_cast<int>(i);
    return -1;
  }
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int max_epochs = 100;
  int patience = 10;
  int grad_accum = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw Error("train config: lr must be positive");
    if (weight_decay < 0) throw Error("train config: negative weight decay");
    if (max_epochs < 1 || grad_accum < 1)
      throw Error("train config: epochs and grad_accum must be >= 1");
    if (patience < 0) throw Error("train config: negative patience");
  }
};

// Encoder per modality (Linear, ReLU, Linear), learned modality embeddings,
// projector, gated-tanh attention scorer, linear classifier head.
struct MilModel {
  ModelConfig cfg;
  std::vector<Linear> enc1;       // F_m -> H_m
  std::vector<Linear> enc2;       // H_m -> D
  std::vector<Tensor> mod_embed;  // D × 1 per modality
  Linear proj;                    // D -> D
  Linear attn_in;                 // D -> L
  Tensor attn_out;                // L × 1
  Linear head;                    // D -> 3
};

// Stable visitation order for the optimizer, serialization and digests.
struct ParamRef {
  Tensor* t = nullptr;
  bool decay = false;  // decoupled weight decay applies to weights only
  std::string name;
};

inline std::vector<ParamRef> param_refs(MilModel& m) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < m.cfg.modalities.size(); ++i) {
    std::string mod = to_string(m.cfg.modalities[i]);
    refs.push_back({&m.enc1[i].W, true, "enc/" + mod + "/W1"});
    refs.push_back({&m.enc1[i].b, false, "enc/" + mod + "/b1"});
    refs.push_back({&m.enc2[i].W, true, "enc/" + mod + "/W2"});
    refs.push_back({&m.enc2[i].b, false, "enc/" + mod + "/b2"});
  }
  for (std::size_t i = 0; i < m.cfg.modalities.size(); ++i)
    refs.push_back({&m.mod_embed[i], false,
                    "embed/" + std::string(to_string(m.cfg.modalities[i]))});
  refs.push_back({&m.proj.W, true, "proj/W"});
  refs.push_back({&m.proj.b, false, "proj/b"});
  refs.push_back({&m.attn_in.W, true, "attn/V"});
  refs.push_back({&m.attn_in.b, false, "attn/b"});
  refs.push_back({&m.attn_out, true, "attn/w"});
  refs.push_back({&m.head.W, true, "head/W"});
  refs.push_back({&m.head.b, false, "head/b"});
  return refs;
}

inline std::vector<ParamRef> param_refs(const MilModel& m) {
  return param_refs(const_cast<MilModel&>(m));
}

namespace detail {

inline void xavier_fill(Tensor& t, int fan_in, int fan_out, Philox& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& x : t.v) x = rng.uniform(-bound, bound);
}

}  // namespace detail

// Weights uniform in ±√(6/(fan_in+fan_out)), biases zero, modality
// embeddings treated as fan_in = fan_out = D. Each tensor draws from its
// own named stream, so layouts stay reproducible across modality subsets.
inline MilModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MilModel m;
  m.cfg = cfg;
  const int D = cfg.embed_dim;
  const int L = cfg.attn_dim;
  for (std::size_t i = 0; i < cfg.modalities.size(); ++i) {
    m.enc1.emplace_back(cfg.hidden_dims[i], cfg.feature_dims[i]);
    m.enc2.emplace_back(D, cfg.hidden_dims[i]);
    m.mod_embed.emplace_back(D, 1);
  }
  m.proj = Linear(D, D);
  m.attn_in = Linear(L, D);
  m.attn_out = Tensor(L, 1);
  m.head = Linear(cfg.num_classes, D);

  for (auto& ref : param_refs(m)) {
    Philox rng(seed, "init/" + ref.name);
    Tensor& t = *ref.t;
    if (ref.name.rfind("embed/", 0) == 0)
      detail::xavier_fill(t, D, D, rng);
    else if (ref.name == "attn/w")
      detail::xavier_fill(t, L, 1, rng);
    else if (ref.decay)
      detail::xavier_fill(t, t.cols, t.rows, rng);
    // biases stay zero
  }
  return m;
}

// Forward intermediates, kept for the analytic backward pass.
struct ForwardTrace {
  std::vector<std::vector<double>> u1;    // encoder hidden pre-ReLU, per instance
  std::vector<std::vector<double>> a1;    // encoder hidden post-ReLU
  std::vector<std::vector<double>> etil;  // embedding + modality tag, D
  std::vector<std::vector<double>> q;     // projector pre-ReLU, D
  std::vector<std::vector<double>> h;     // projector post-ReLU, D
  std::vector<std::vector<double>> t;     // attention tanh vector, L
  std::vector<double> ell;                // attention logits, N
  std::vector<double> alpha;              // attention weights, N
  std::vector<double> z;                  // pooled representation, D
  std::array<double, 3> logits{};
};

inline void check_finite(const double* x, std::size_t n, const char* layer) {
  if (!detail::all_finite(x, n))
    throw Error(std::string("non-finite value in ") + layer);
}

// Rows ẽ_j = enc2(ReLU(enc1(x_j))) + v_{m(j)}.
inline std::vector<std::vector<double>> encode_instances(const MilModel& m,
                                                         const Bag& bag,
                                                         ForwardTrace* trace =
                                                             nullptr) {
  if (bag.instances.empty()) throw Error("encode_instances: empty bag");
  const int D = m.cfg.embed_dim;
  std::vector<std::vector<double>> etil;
  etil.reserve(bag.size());
  for (const auto& inst : bag.instances) {
    int e = m.cfg.encoder_index(inst.modality);
    if (e < 0)
      throw Error(std::string("no encoder for modality ") +
                  to_string(inst.modality));
    if (static_cast<int>(inst.x.size()) != m.cfg.feature_dims[e])
      throw Error("instance feature length does not match encoder input");
    std::vector<double> u1(m.cfg.hidden_dims[e]);
    detail::matvec(m.enc1[e].W, inst.x.data(), u1.data());
    for (int i = 0; i < m.enc1[e].b.rows; ++i) u1[i] += m.enc1[e].b.v[i];
    std::vector<double> a1(u1.size());
    for (std::size_t i = 0; i < u1.size(); ++i) a1[i] = u1[i] > 0 ? u1[i] : 0;
    std::vector<double> row(D);
    detail::matvec(m.enc2[e].W, a1.data(), row.data());
    for (int i = 0; i < D; ++i) row[i] += m.enc2[e].b.v[i] + m.mod_embed[e].v[i];
    check_finite(row.data(), row.size(), "encoder");
    if (trace) {
      trace->u1.push_back(std::move(u1));
      trace->a1.push_back(std::move(a1));
    }
    etil.push_back(std::move(row));
  }
  return etil;
}

// h_j = ReLU(W_φ ẽ_j + b_φ); ℓ_j = w_aᵀ tanh(V_a h_j + b_a);
// α = softmax(ℓ) with max subtraction; z = Σ_j α_j h_j.
inline void attention_forward(const MilModel& m,
                              const std::vector<std::vector<double>>& etil,
                              ForwardTrace& tr) {
  const int D = m.cfg.embed_dim;
  const int L = m.cfg.attn_dim;
  const std::size_t N = etil.size();
  tr.ell.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    std::vector<double> q(D);
    detail::matvec(m.proj.W, etil[j].data(), q.data());
    for (int i = 0; i < D; ++i) q[i] += m.proj.b.v[i];
    std::vector<double> h(D);
    for (int i = 0; i < D; ++i) h[i] = q[i] > 0 ? q[i] : 0;
    check_finite(h.data(), h.size(), "projector");
    std::vector<double> t(L);
    detail::matvec(m.attn_in.W, h.data(), t.data());
    for (int i = 0; i < L; ++i) t[i] = std::tanh(t[i] + m.attn_in.b.v[i]);
    double ell = 0.0;
    for (int i = 0; i < L; ++i) ell += m.attn_out.v[i] * t[i];
    check_finite(&ell, 1, "attention");
    tr.q.push_back(std::move(q));
    tr.h.push_back(std::move(h));
    tr.t.push_back(std::move(t));
    tr.ell[j] = ell;
  }
  double mx = *std::max_element(tr.ell.begin(), tr.ell.end());
  tr.alpha.resize(N);
  double denom = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    tr.alpha[j] = std::exp(tr.ell[j] - mx);
    denom += tr.alpha[j];
  }
  for (auto& a : tr.alpha) a /= denom;
  tr.z.assign(D, 0.0);
  for (std::size_t j = 0; j < N; ++j)
    for (int i = 0; i < D; ++i) tr.z[i] += tr.alpha[j] * tr.h[j][i];
}

struct PooledBag {
  std::vector<double> z;
  std::vector<double> alpha;
};

inline PooledBag attention_pool(const MilModel& m,
                                const std::vector<std::vector<double>>& etil) {
  if (etil.empty()) throw Error("attention_pool: empty input");
  ForwardTrace tr;
  attention_forward(m, etil, tr);
  return {std::move(tr.z), std::move(tr.alpha)};
}

inline ForwardTrace forward(const MilModel& m, const Bag& bag) {
  ForwardTrace tr;
  auto etil = encode_instances(m, bag, &tr);
  attention_forward(m, etil, tr);
  tr.etil = std::move(etil);
  detail::matvec(m.head.W, tr.z.data(), tr.logits.data());
  for (int c = 0; c < m.cfg.num_classes; ++c) tr.logits[c] += m.head.b.v[c];
  check_finite(tr.logits.data(), 3, "classifier");
  return tr;
}

inline std::array<double, 3> softmax3(const std::array<double, 3>& logits) {
  double mx = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> p;
  double denom = 0.0;
  for (int c = 0; c < 3; ++c) {
    p[c] = std::exp(logits[c] - mx);
    denom += p[c];
  }
  for (auto& x : p) x /= denom;
  return p;
}

// Gradients accumulate into `grads` (same shapes as the model); the caller
// zeroes and scales them. Returns the weighted cross-entropy loss.
inline double loss_and_grad(const MilModel& m, const Bag& bag,
                            const std::array<double, 3>& class_weights,
                            MilModel& grads) {
  int y = static_cast<int>(bag.label);
  double wy = class_weights[y];
  ForwardTrace tr = forward(m, bag);
  std::array<double, 3> p = softmax3(tr.logits);
  double loss = -wy * std::log(p[y]);

  const int D = m.cfg.embed_dim;
  const int L = m.cfg.attn_dim;
  const std::size_t N = bag.size();

  std::array<double, 3> dlogits;
  for (int c = 0; c < 3; ++c) dlogits[c] = wy * (p[c] - (c == y ? 1.0 : 0.0));

  detail::outer_add(grads.head.W, dlogits.data(), tr.z.data());
  for (int c = 0; c < 3; ++c) grads.head.b.v[c] += dlogits[c];
  std::vector<double> dz(D, 0.0);
  detail::matvec_t_add(m.head.W, dlogits.data(), dz.data());

  // pooling: z = Σ α_j h_j
  std::vector<double> dalpha(N);
  std::vector<std::vector<double>> dh(N, std::vector<double>(D));
  for (std::size_t j = 0; j < N; ++j) {
    double acc = 0.0;
    for (int i = 0; i < D; ++i) {
      acc += dz[i] * tr.h[j][i];
      dh[j][i] = tr.alpha[j] * dz[i];
    }
    dalpha[j] = acc;
  }

  // softmax: dℓ_j = α_j (dα_j − Σ_k α_k dα_k)
  double mix = 0.0;
  for (std::size_t k = 0; k < N; ++k) mix += tr.alpha[k] * dalpha[k];
  std::vector<double> dell(N);
  for (std::size_t j = 0; j < N; ++j)
    dell[j] = tr.alpha[j] * (dalpha[j] - mix);

  std::vector<double> ds(L), detil(D), dq(D);
  for (std::size_t j = 0; j < N; ++j) {
    // ℓ_j = w_aᵀ tanh(V_a h_j + b_a)
    for (int i = 0; i < L; ++i) {
      double dt = dell[j] * m.attn_out.v[i];
      grads.attn_out.v[i] += dell[j] * tr.t[j][i];
      ds[i] = dt * (1.0 - tr.t[j][i] * tr.t[j][i]);
    }
    detail::outer_add(grads.attn_in.W, ds.data(), tr.h[j].data());
    for (int i = 0; i < L; ++i) grads.attn_in.b.v[i] += ds[i];
    detail::matvec_t_add(m.attn_in.W, ds.data(), dh[j].data());

    // h_j = ReLU(W_φ ẽ_j + b_φ)
    for (int i = 0; i < D; ++i) dq[i] = tr.q[j][i] > 0 ? dh[j][i] : 0.0;
    detail::outer_add(grads.proj.W, dq.data(), tr.etil[j].data());
    for (int i = 0; i < D; ++i) grads.proj.b.v[i] += dq[i];
    std::fill(detil.begin(), detil.end(), 0.0);
    detail::matvec_t_add(m.proj.W, dq.data(), detil.data());

    // ẽ_j = enc2(ReLU(enc1(x))) + v_m
    int e = m.cfg.encoder_index(bag.instances[j].modality);
    for (int i = 0; i < D; ++i) grads.mod_embed[e].v[i] += detil[i];
    detail::outer_add(grads.enc2[e].W, detil.data(), tr.a1[j].data());
    for (int i = 0; i < D; ++i) grads.enc2[e].b.v[i] += detil[i];
    std::vector<double> da1(tr.a1[j].size(), 0.0);
    detail::matvec_t_add(m.enc2[e].W, detil.data(), da1.data());
    for (std::size_t i = 0; i < da1.size(); ++i)
      if (!(tr.u1[j][i] > 0)) da1[i] = 0.0;
    detail::outer_add(grads.enc1[e].W, da1.data(), bag.instances[j].x.data());
    for (std::size_t i = 0; i < da1.size(); ++i)
      grads.enc1[e].b.v[i] += da1[i];
  }
  return loss;
}

inline MilModel zeros_like(const MilModel& m) {
  MilModel g = m;
  for (auto& ref : param_refs(g)) ref.t->zero();
  return g;
}

inline void scale_params(MilModel& m, double s) {
  for (auto& ref : param_refs(m))
    for (auto& x : ref.t->v) x *= s;
}

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long t = 0;
};

inline AdamState adam_init(const MilModel& model) {
  AdamState s;
  for (auto& ref : param_refs(model)) {
    s.m.emplace_back(ref.t->rows, ref.t->cols);
    s.v.emplace_back(ref.t->rows, ref.t->cols);
  }
  return s;
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One scalar of the bias-corrected adaptive-moment update; weight decay is
// decoupled from the moment estimates.
inline void adam_scalar(double& w, double g, double& m, double& v,
                        long long t, double lr, double weight_decay) {
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
  double mhat = m / (1.0 - std::pow(kAdamBeta1, static_cast<double>(t)));
  double vhat = v / (1.0 - std::pow(kAdamBeta2, static_cast<double>(t)));
  w -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * w);
}

// Applied to every parameter; weight decay reaches weight matrices only
// (biases and modality embeddings are not decayed).
inline void optimizer_step(MilModel& model, const MilModel& grads,
                           AdamState& state, const TrainConfig& cfg) {
  state.t += 1;
  auto prefs = param_refs(model);
  auto grefs = param_refs(const_cast<MilModel&>(grads));
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    Tensor& w = *prefs[i].t;
    const Tensor& g = *grefs[i].t;
    Tensor& mo = state.m[i];
    Tensor& vo = state.v[i];
    double wd = prefs[i].decay ? cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k)
      adam_scalar(w.v[k], g.v[k], mo.v[k], vo.v[k], state.t, cfg.lr, wd);
  }
}

inline double mean_loss(const MilModel& m, const std::vector<const Bag*>& bags,
                        const std::array<double, 3>& class_weights) {
  double total = 0.0;
  for (const Bag* b : bags) {
    ForwardTrace tr = forward(m, *b);
    auto p = softmax3(tr.logits);
    total += -class_weights[static_cast<int>(b->label)] *
             std::log(p[static_cast<int>(b->label)]);
  }
  return total / static_cast<double>(bags.size());
}

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  MilModel model;
  std::vector<EpochStats> history;
  double best_val_loss = 0.0;
  int best_epoch = 0;  // 1-based epoch whose parameters were kept
};

// Epochs shuffle the training bags through a seed-named stream, accumulate
// gradients over grad_accum bags per optimizer step with the loss averaged
// inside each group, and track the lowest validation loss. Training stops
// once `patience` consecutive epochs fail to improve it.
inline TrainResult train(MilModel model, const std::vector<const Bag*>& train_bags,
                         const std::vector<const Bag*>& val_bags,
                         const std::array<double, 3>& class_weights,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_bags.empty()) throw Error("train: no training bags");
  if (val_bags.empty()) throw Error("train: no validation bags");

  AdamState adam = adam_init(model);
  MilModel grads = zeros_like(model);
  TrainResult out;
  out.model = model;
  out.best_val_loss = std::numeric_limits<double>::infinity();
  int bad = 0;

  std::vector<std::size_t> order(train_bags.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Philox shuffler(cfg.seed, "train/epoch/" + std::to_string(epoch));
    shuffler.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t group =
          std::min<std::size_t>(cfg.grad_accum, order.size() - pos);
      for (auto& ref : param_refs(grads)) ref.t->zero();
      for (std::size_t k = 0; k < group; ++k)
        epoch_loss +=
            loss_and_grad(model, *train_bags[order[pos + k]], class_weights,
                          grads);
      scale_params(grads, 1.0 / static_cast<double>(group));
      optimizer_step(model, grads, adam, cfg);
      pos += group;
    }

    EpochStats st;
    st.train_loss = epoch_loss / static_cast<double>(train_bags.size());
    st.val_loss = mean_loss(model, val_bags, class_weights);
    out.history.push_back(st);

    if (st.val_loss < out.best_val_loss) {
      out.best_val_loss = st.val_loss;
      out.best_epoch = epoch;
      out.model = model;
      bad = 0;
    } else {
      ++bad;
    }
    if (bad >= cfg.patience) break;
  }
  return out;
}

struct ParamFlopCount {
  long long params = 0;
  long long flops = 0;  // 2 × multiply-adds of one forward pass
};

// FLOPs count linear-layer multiply-adds (×2) plus the pooling products;
// elementwise activations are excluded from the estimate.
inline ParamFlopCount count_params_flops(const MilModel& m,
                                         const std::vector<long long>&
                                             instances_per_modality) {
  if (instances_per_modality.size() != m.cfg.modalities.size())
    throw Error("count_params_flops: instance counts must align");
  ParamFlopCount out;
  for (auto& ref : param_refs(const_cast<MilModel&>(m)))
    out.params += static_cast<long long>(ref.t->size());
  const long long D = m.cfg.embed_dim;
  const long long L = m.cfg.attn_dim;
  long long macs = 0;
  long long total_n = 0;
  for (std::size_t i = 0; i < m.cfg.modalities.size(); ++i) {
    long long n = instances_per_modality[i];
    long long f = m.cfg.feature_dims[i];
    long long h = m.cfg.hidden_dims[i];
    macs += n * (f * h + h * D);
    total_n += n;
  }
  macs += total_n * (D * D);      // projector
  macs += total_n * (L * D + L);  // attention scorer
  macs += total_n * D;            // pooled sum
  macs += static_cast<long long>(m.cfg.num_classes) * D;
  out.flops = 2 * macs;
  return out;
}

inline std::uint64_t param_digest(const MilModel& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto& ref : param_refs(const_cast<MilModel&>(m))) {
    h ^= fnv1a64(ref.name);
    h *= 1099511628211ULL;
    h ^= fnv1a64(ref.t->v.data(), ref.t->v.size() * sizeof(double));
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

inline std::string hex_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hex_double(std::string_view s, const char* what) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x,
                             std::chars_format::hex);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw Error(std::string("bad checkpoint value in ") + what);
  return x;
}

inline void append_tensor_rows(std::vector<std::string>& lines,
                               const Tensor& t) {
  for (int r = 0; r < t.rows; ++r) {
    std::string line;
    for (int c = 0; c < t.cols; ++c) {
      if (c) line += ' ';
      line += hex_double(t.at(r, c));
    }
    lines.push_back(std::move(line));
  }
}

}  // namespace detail

// Text checkpoint: config header, then per tensor its parameters and both
// optimizer moments as hex floats. Round trips are bit-exact.
inline void save_checkpoint(const std::string& path, const MilModel& model,
                            const AdamState& adam, std::uint64_t seed) {
  std::vector<std::string> lines;
  lines.push_back("wearmil-checkpoint-v1");
  lines.push_back("seed " + std::to_string(seed));
  std::string mods, fdims, hdims;
  for (std::size_t i = 0; i < model.cfg.modalities.size(); ++i) {
    if (i) {
      mods += ',';
      fdims += ',';
      hdims += ',';
    }
    mods += to_string(model.cfg.modalities[i]);
    fdims += std::to_string(model.cfg.feature_dims[i]);
    hdims += std::to_string(model.cfg.hidden_dims[i]);
  }
  lines.push_back("modalities " + mods);
  lines.push_back("feature_dims " + fdims);
  lines.push_back("hidden_dims " + hdims);
  lines.push_back("embed_dim " + std::to_string(model.cfg.embed_dim));
  lines.push_back("attn_dim " + std::to_string(model.cfg.attn_dim));
  lines.push_back("adam_t " + std::to_string(adam.t));
  auto refs = param_refs(const_cast<MilModel&>(model));
  lines.push_back("tensors " + std::to_string(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    lines.push_back("tensor " + refs[i].name + " " +
                    std::to_string(refs[i].t->rows) + " " +
                    std::to_string(refs[i].t->cols));
    detail::append_tensor_rows(lines, *refs[i].t);
    lines.push_back("adam_m");
    detail::append_tensor_rows(lines, adam.m[i]);
    lines.push_back("adam_v");
    detail::append_tensor_rows(lines, adam.v[i]);
  }
  write_lines(path, lines);
}

struct Checkpoint {
  MilModel model;
  AdamState adam;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline void read_tensor_rows(const std::vector<std::string>& lines,
                             std::size_t& pos, Tensor& t, const char* what) {
  for (int r = 0; r < t.rows; ++r) {
    if (pos >= lines.size())
      throw Error(std::string("truncated checkpoint in ") + what);
    auto cells = split_ws(lines[pos++]);
    if (static_cast<int>(cells.size()) != t.cols)
      throw Error(std::string("bad tensor row width in ") + what);
    for (int c = 0; c < t.cols; ++c)
      t.at(r, c) = parse_hex_double(cells[c], what);
  }
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  if (lines.empty() || lines[0] != "wearmil-checkpoint-v1")
    throw Error(path + ": not a checkpoint file");

  auto field = [&](std::size_t idx, const std::string& key) -> std::string {
    if (idx >= lines.size() || lines[idx].rfind(key + " ", 0) != 0)
      throw Error(path + ": expected '" + key + "' line");
    return lines[idx].substr(key.size() + 1);
  };

  Checkpoint ck;
  {
    std::string s = field(1, "seed");
    auto res = std::from_chars(s.data(), s.data() + s.size(), ck.seed);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw Error(path + ": bad seed value");
  }
  ModelConfig cfg;
  for (const auto& name : detail::split_commas(field(2, "modalities")))
    cfg.modalities.push_back(parse_modality(name));
  for (const auto& d : detail::split_commas(field(3, "feature_dims")))
    cfg.feature_dims.push_back(static_cast<int>(parse_int(d, "feature_dims")));
  for (const auto& d : detail::split_commas(field(4, "hidden_dims")))
    cfg.hidden_dims.push_back(static_cast<int>(parse_int(d, "hidden_dims")));
  cfg.embed_dim = static_cast<int>(parse_int(field(5, "embed_dim"), "embed_dim"));
  cfg.attn_dim = static_cast<int>(parse_int(field(6, "attn_dim"), "attn_dim"));
  long long adam_t = parse_int(field(7, "adam_t"), "adam_t");
  std::size_t n_tensors =
      static_cast<std::size_t>(parse_int(field(8, "tensors"), "tensors"));

  ck.model = init_model(cfg, ck.seed);
  ck.adam = adam_init(ck.model);
  ck.adam.t = adam_t;
  auto refs = param_refs(ck.model);
  if (refs.size() != n_tensors)
    throw Error(path + ": tensor count does not match config");

  std::size_t pos = 9;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::string expect = "tensor " + refs[i].name + " " +
                         std::to_string(refs[i].t->rows) + " " +
                         std::to_string(refs[i].t->cols);
    if (pos >= lines.size() || lines[pos] != expect)
      throw Error(path + ": expected '" + expect + "'");
    ++pos;
    detail::read_tensor_rows(lines, pos, *refs[i].t, refs[i].name.c_str());
    if (pos >= lines.size() || lines[pos] != "adam_m")
      throw Error(path + ": expected adam_m block");
    ++pos;
    detail::read_tensor_rows(lines, pos, ck.adam.m[i], "adam_m");
    if (pos >= lines.size() || lines[pos] != "adam_v")
      throw Error(path + ": expected adam_v block");
    ++pos;
    detail::read_tensor_rows(lines, pos, ck.adam.v[i], "adam_v");
  }
  return ck;
}

}  // namespace wearmil
