#include "dosepred/dca.hpp"

#include <cmath>
#include <stdexcept>

namespace dosepred {

void DcaConfig::validate() const {
  if (n_stages < 1) throw std::invalid_argument("dca: need at least one stage");
  if (static_cast<int>(channels.size()) != n_stages)
    throw std::invalid_argument("dca: channel count does not match stages");
  if (heads < 1) throw std::invalid_argument("dca: heads must be >= 1");
  for (int c : channels) {
    if (c < 1) throw std::invalid_argument("dca: channels must be positive");
    if (c % heads != 0)
      throw std::invalid_argument("dca: stage channels not divisible by heads");
  }
  if (total_channels() % heads != 0)
    throw std::invalid_argument("dca: total channels not divisible by heads");
  for (int s = 0; s < n_stages; ++s) {
    const int div = 1 << s;
    for (int e : base_spatial)
      if (e % div != 0)
        throw std::invalid_argument("dca: stage spatial extents not integral");
  }
  const int pool = pool_factor(0);
  for (int e : stage_spatial(0))
    if (e % pool != 0)
      throw std::invalid_argument("dca: stage-1 extents not divisible by pooling");
}

int DcaConfig::total_channels() const {
  int t = 0;
  for (int c : channels) t += c;
  return t;
}

std::array<int, 3> DcaConfig::stage_spatial(int stage) const {
  const int div = 1 << stage;
  return {base_spatial[0] / div, base_spatial[1] / div, base_spatial[2] / div};
}

std::array<int, 3> DcaConfig::coarse_spatial() const {
  return stage_spatial(n_stages - 1);
}

int DcaConfig::token_count() const {
  const auto s = coarse_spatial();
  return s[0] * s[1] * s[2];
}

int DcaConfig::pool_factor(int stage) const {
  return 1 << (n_stages - 1 - stage);
}

Tensor& DcaState::add(const std::string& name, Shape shape) {
  params_.emplace_back(name, Tensor(std::move(shape), true));
  return params_.back().second;
}

DcaState::DcaState(const std::vector<int>& channels, std::uint64_t seed) {
  const int n = static_cast<int>(channels.size());
  int cc = 0;
  for (int c : channels) cc += c;
  auto stage_name = [](const std::string& base, int i) {
    return base + ".s" + std::to_string(i + 1);
  };
  for (int i = 0; i < n; ++i) {
    add(stage_name("embed", i) + ".scale", {channels[i]});
    add(stage_name("embed", i) + ".bias", {channels[i]});
  }
  for (int i = 0; i < n; ++i) {
    add(stage_name("cca.q", i) + ".scale", {channels[i]});
    add(stage_name("cca.q", i) + ".bias", {channels[i]});
  }
  add("cca.k.scale", {cc});
  add("cca.k.bias", {cc});
  add("cca.v.scale", {cc});
  add("cca.v.bias", {cc});
  for (int i = 0; i < n; ++i) {
    add(stage_name("sca.norm", i) + ".gamma", {channels[i]});
    add(stage_name("sca.norm", i) + ".beta", {channels[i]});
  }
  add("sca.q.scale", {cc});
  add("sca.q.bias", {cc});
  add("sca.k.scale", {cc});
  add("sca.k.bias", {cc});
  for (int i = 0; i < n; ++i) {
    add(stage_name("sca.v", i) + ".scale", {channels[i]});
    add(stage_name("sca.v", i) + ".bias", {channels[i]});
  }
  for (int i = 0; i < n; ++i) {
    add(stage_name("out.norm", i) + ".gamma", {channels[i]});
    add(stage_name("out.norm", i) + ".beta", {channels[i]});
  }
  for (int i = 0; i < n; ++i) {
    add(stage_name("fuse", i) + ".scale", {channels[i]});
    add(stage_name("fuse", i) + ".bias", {channels[i]});
  }

  // scales ~ U(0.9, 1.1), norm gammas 1, fusion scales 0, all shifts 0
  RandomStream rng(seed);
  for (auto& [name, t] : params_) {
    const bool is_scale = name.ends_with(".scale");
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_fuse = name.rfind("fuse", 0) == 0;
    for (double& v : t.data()) {
      if (is_fuse)
        v = 0.0;
      else if (is_scale)
        v = rng.uniform(0.9, 1.1);
      else if (is_gamma)
        v = 1.0;
      else
        v = 0.0;
    }
  }
}

const Tensor& DcaState::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw std::out_of_range("no dca parameter named " + name);
}

Tensor& DcaState::param(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return t;
  throw std::out_of_range("no dca parameter named " + name);
}

void DcaState::randomize(RandomStream& rng) {
  // Ranges kept tight so attention logits stay unsaturated; a saturated
  // softmax leaves some parameters with sensitivities too small for finite
  // differences to resolve.
  for (auto& [name, t] : params_) {
    const bool is_shift = name.ends_with(".bias") || name.ends_with(".beta");
    for (double& v : t.data())
      v = is_shift ? rng.uniform(-0.1, 0.1) : rng.uniform(0.9, 1.1);
  }
}

namespace {

std::string sname(const std::string& base, int i) {
  return base + ".s" + std::to_string(i + 1);
}

Tensor affine(Tape& tape, const DcaState& st, const Tensor& x,
              const std::string& base) {
  return per_channel_affine(tape, x, st.param(base + ".scale"),
                            st.param(base + ".bias"));
}

}  // namespace

std::vector<Tensor> embed_patches(Tape& tape, const DcaConfig& cfg,
                                  const DcaState& state,
                                  const std::vector<Tensor>& E) {
  cfg.validate();
  if (static_cast<int>(E.size()) != cfg.n_stages)
    throw std::invalid_argument("embed_patches: stage count mismatch");
  std::vector<Tensor> tokens;
  tokens.reserve(E.size());
  for (int i = 0; i < cfg.n_stages; ++i) {
    const auto want = cfg.stage_spatial(i);
    const Tensor& e = E[static_cast<std::size_t>(i)];
    if (e.ndim() != 4 || e.dim(0) != cfg.channels[static_cast<std::size_t>(i)] ||
        e.dim(1) != want[0] || e.dim(2) != want[1] || e.dim(3) != want[2])
      throw std::invalid_argument("embed_patches: stage shape mismatch");
    Tensor pooled = avg_pool3d(tape, e, cfg.pool_factor(i));
    Tensor tok = tokens_from_volume(tape, pooled);
    tokens.push_back(affine(tape, state, tok, sname("embed", i)));
  }
  return tokens;
}

std::vector<Tensor> channel_cross_attention(Tape& tape, const DcaConfig& cfg,
                                            const DcaState& state,
                                            const std::vector<Tensor>& tokens) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.total_channels()));
  Tensor tc = concat_cols(tape, tokens);
  Tensor k = affine(tape, state, tc, "cca.k");
  Tensor v = affine(tape, state, tc, "cca.v");
  Tensor vt = transpose(tape, v);
  std::vector<Tensor> out;
  out.reserve(tokens.size());
  for (int i = 0; i < cfg.n_stages; ++i) {
    Tensor q = affine(tape, state, tokens[static_cast<std::size_t>(i)],
                      sname("cca.q", i));
    Tensor scores = scale(tape, matmul(tape, transpose(tape, q), k), inv_sqrt);
    Tensor attn = softmax_rows(tape, scores);           // [C_i, C_c]
    Tensor o = transpose(tape, matmul(tape, attn, vt)); // [P, C_i]
    out.push_back(add(tape, o, tokens[static_cast<std::size_t>(i)]));
  }
  return out;
}

std::vector<Tensor> spatial_cross_attention(Tape& tape, const DcaConfig& cfg,
                                            const DcaState& state,
                                            const std::vector<Tensor>& tokens) {
  const int h = cfg.heads;
  const int cc = cfg.total_channels();
  const int head_width = cc / h;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));

  std::vector<Tensor> normed;
  normed.reserve(tokens.size());
  for (int i = 0; i < cfg.n_stages; ++i)
    normed.push_back(layer_norm(tape, tokens[static_cast<std::size_t>(i)],
                                state.param(sname("sca.norm", i) + ".gamma"),
                                state.param(sname("sca.norm", i) + ".beta")));
  Tensor tc = concat_cols(tape, normed);
  Tensor q = affine(tape, state, tc, "sca.q");
  Tensor k = affine(tape, state, tc, "sca.k");

  std::vector<Tensor> attn_per_head;
  attn_per_head.reserve(static_cast<std::size_t>(h));
  for (int hd = 0; hd < h; ++hd) {
    Tensor qh = slice_cols(tape, q, hd * head_width, (hd + 1) * head_width);
    Tensor kh = slice_cols(tape, k, hd * head_width, (hd + 1) * head_width);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    attn_per_head.push_back(softmax_rows(tape, scores));  // [P, P]
  }

  std::vector<Tensor> out;
  out.reserve(tokens.size());
  for (int i = 0; i < cfg.n_stages; ++i) {
    const int ci = cfg.channels[static_cast<std::size_t>(i)];
    const int slice_width = ci / h;
    Tensor v = affine(tape, state, tokens[static_cast<std::size_t>(i)],
                      sname("sca.v", i));
    std::vector<Tensor> heads_out;
    heads_out.reserve(static_cast<std::size_t>(h));
    for (int hd = 0; hd < h; ++hd) {
      Tensor vh = slice_cols(tape, v, hd * slice_width, (hd + 1) * slice_width);
      heads_out.push_back(matmul(tape, attn_per_head[static_cast<std::size_t>(hd)], vh));
    }
    Tensor o = h == 1 ? heads_out[0] : concat_cols(tape, heads_out);
    out.push_back(add(tape, o, tokens[static_cast<std::size_t>(i)]));
  }
  return out;
}

std::vector<Tensor> dca_forward(Tape& tape, const DcaConfig& cfg,
                                const DcaState& state,
                                const std::vector<Tensor>& E) {
  std::vector<Tensor> tokens = embed_patches(tape, cfg, state, E);
  tokens = channel_cross_attention(tape, cfg, state, tokens);
  tokens = spatial_cross_attention(tape, cfg, state, tokens);
  const auto coarse = cfg.coarse_spatial();
  std::vector<Tensor> out;
  out.reserve(E.size());
  for (int i = 0; i < cfg.n_stages; ++i) {
    Tensor t = layer_norm(tape, tokens[static_cast<std::size_t>(i)],
                          state.param(sname("out.norm", i) + ".gamma"),
                          state.param(sname("out.norm", i) + ".beta"));
    t = affine(tape, state, t, sname("fuse", i));
    Tensor vol = volume_from_tokens(tape, t, coarse[0], coarse[1], coarse[2]);
    Tensor up = upsample_nearest3d(tape, vol, cfg.pool_factor(i));
    out.push_back(add(tape, up, E[static_cast<std::size_t>(i)]));
  }
  return out;
}

}  // namespace dosepred
