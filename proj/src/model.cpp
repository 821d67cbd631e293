#include "cap/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/kernels.hpp"
#include "json.hpp"

namespace cap {

// ----------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_mlp, "d_mlp");
  positive(vocab_size, "vocab_size");
  positive(max_positions, "max_positions");
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (activation != "gelu" && activation != "gelu_new") {
    throw ConfigError("model config: unsupported activation '" + activation + "'");
  }
  if (positional_scheme != "learned-absolute") {
    throw ConfigError("model config: unsupported positional scheme '" + positional_scheme + "'");
  }
  if (!(layer_norm_epsilon > 0.0f)) throw ConfigError("model config: layer_norm_epsilon must be positive");
}

ModelConfig parse_model_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  auto count = [&](const char* key, const char* alias, std::optional<std::size_t> fallback = {}) -> std::size_t {
    for (const char* k : {key, alias}) {
      if (k && j.contains(k) && !j[k].is_null()) {
        if (!j[k].is_number_integer() || j[k].get<long long>() < 0) {
          throw ConfigError(std::string("model config: '") + k + "' must be a non-negative integer");
        }
        return j[k].get<std::size_t>();
      }
    }
    if (fallback) return *fallback;
    throw ConfigError(std::string("model config: missing '") + key + "'");
  };
  ModelConfig c;
  c.n_layers = count("n_layers", "n_layer");
  c.d_model = count("d_model", "n_embd");
  c.n_heads = count("n_heads", "n_head");
  c.d_mlp = count("d_mlp", "n_inner", 4 * c.d_model);
  c.vocab_size = count("vocab_size", nullptr);
  c.max_positions = count("max_positions", "n_positions");
  if (j.contains("d_head") && j["d_head"].get<std::size_t>() * c.n_heads != c.d_model) {
    throw ConfigError("model config: d_head * n_heads must equal d_model");
  }
  if (j.contains("layer_norm_epsilon")) c.layer_norm_epsilon = j["layer_norm_epsilon"].get<float>();
  if (j.contains("activation")) c.activation = j["activation"].get<std::string>();
  if (j.contains("activation_function")) c.activation = j["activation_function"].get<std::string>();
  if (j.contains("positional_scheme")) c.positional_scheme = j["positional_scheme"].get<std::string>();
  c.validate();
  return c;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_model_config(buffer.str());
}

std::string serialize_model_config(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_head"] = c.d_head();
  j["d_mlp"] = c.d_mlp;
  j["vocab_size"] = c.vocab_size;
  j["max_positions"] = c.max_positions;
  j["layer_norm_epsilon"] = c.layer_norm_epsilon;
  j["activation"] = c.activation;
  j["positional_scheme"] = c.positional_scheme;
  return j.dump(2);
}

std::string to_string(Component c) {
  switch (c) {
    case Component::AttnOut: return "attn_out";
    case Component::MlpOut: return "mlp_out";
    case Component::ResidPost: return "resid_post";
    case Component::AttnPattern: return "attn_pattern";
  }
  return "?";
}

Component parse_component(const std::string& name) {
  if (name == "attn_out") return Component::AttnOut;
  if (name == "mlp_out") return Component::MlpOut;
  if (name == "resid_post") return Component::ResidPost;
  if (name == "attn_pattern") return Component::AttnPattern;
  throw InputError("unknown hook component '" + name + "'");
}

std::string to_string(const HookSite& site) {
  return "blocks." + std::to_string(site.layer) + "." + to_string(site.component);
}

// ----------------------------------------------------------------- loading

namespace {

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

Tensor transpose(const Tensor& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor t({cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t.at(c, r) = m.at(r, c);
  return t;
}

}  // namespace

Model Model::from_tensors(const ModelConfig& config, const TensorMap& tensors) {
  config.validate();
  TensorMap named;
  for (const auto& [name, t] : tensors) {
    const std::string stripped = name.starts_with("transformer.") ? name.substr(12) : name;
    named.insert_or_assign(stripped, t);
  }

  const std::size_t d = config.d_model;
  Fnv1a digest;
  auto take = [&](const std::string& name, const Shape& expected) -> Tensor {
    auto it = named.find(name);
    if (it == named.end()) throw LoadError("missing tensor '" + name + "'");
    if (it->second.shape() != expected) {
      throw LoadError("tensor '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                      to_string(expected));
    }
    if (!it->second.all_finite()) throw LoadError("tensor '" + name + "' contains non-finite values");
    digest.update(name.data(), name.size());
    for (std::size_t extent : expected) {
      const std::uint64_t e = extent;
      digest.update(&e, sizeof e);
    }
    digest.update(it->second.data(), it->second.size() * sizeof(float));
    return it->second;
  };

  if (auto it = named.find("wte.weight"); it != named.end() && it->second.rank() == 2 &&
                                          it->second.dim(0) != config.vocab_size) {
    throw ConfigError("model config vocab_size " + std::to_string(config.vocab_size) +
                      " does not match wte.weight rows " + std::to_string(it->second.dim(0)));
  }

  Model m;
  m.config_ = config;
  // Names are digested in a fixed order so the checksum is independent of file layout.
  m.wte_ = take("wte.weight", {config.vocab_size, d});
  m.wpe_ = take("wpe.weight", {config.max_positions, d});
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    Layer l;
    l.ln1_gamma = take(p + "ln_1.weight", {d});
    l.ln1_beta = take(p + "ln_1.bias", {d});
    l.attn_weight = take(p + "attn.c_attn.weight", {d, 3 * d});
    l.attn_bias = take(p + "attn.c_attn.bias", {3 * d});
    l.proj_weight = take(p + "attn.c_proj.weight", {d, d});
    l.proj_bias = take(p + "attn.c_proj.bias", {d});
    l.ln2_gamma = take(p + "ln_2.weight", {d});
    l.ln2_beta = take(p + "ln_2.bias", {d});
    l.fc_weight = take(p + "mlp.c_fc.weight", {d, config.d_mlp});
    l.fc_bias = take(p + "mlp.c_fc.bias", {config.d_mlp});
    l.out_weight = take(p + "mlp.c_proj.weight", {config.d_mlp, d});
    l.out_bias = take(p + "mlp.c_proj.bias", {d});
    m.layers_.push_back(std::move(l));
  }
  m.lnf_gamma_ = take("ln_f.weight", {d});
  m.lnf_beta_ = take("ln_f.bias", {d});
  m.wte_t_ = transpose(m.wte_);
  m.checksum_ = digest.hex();
  return m;
}

Model load_model(const std::filesystem::path& weights, const ModelConfig& config) {
  return Model::from_tensors(config, read_safetensors(weights));
}

void check_vocab_compatible(const ModelConfig& config, std::size_t tokenizer_vocab_size) {
  if (config.vocab_size != tokenizer_vocab_size) {
    throw ConfigError("model vocab_size " + std::to_string(config.vocab_size) + " does not match tokenizer vocabulary " +
                      std::to_string(tokenizer_vocab_size));
  }
}

// ----------------------------------------------------------------- forward

namespace {

// Tracks the grouped length a hook commits to and checks every tensor it returns.
class HookRunner {
 public:
  HookRunner(const ActivationHook* hook, std::size_t n_layers) : hook_(hook) {
    if (hook_ && hook_->site().layer >= n_layers) {
      throw ContractError("hook site " + to_string(hook_->site()) + " is outside a " + std::to_string(n_layers) +
                          "-layer model");
    }
  }

  bool at(std::size_t layer, Component c) const {
    return hook_ && hook_->site().layer == layer && hook_->site().component == c;
  }

  // x is [len, F]; returns [G, F].
  Tensor sequence(const Tensor& x) {
    const std::size_t len = x.dim(0), width = x.dim(1);
    Tensor out = hook_->reduce_sequence(x.reshaped({1, len, width}));
    if (out.rank() != 3 || out.dim(0) != 1 || out.dim(2) != width) {
      throw ContractError("hook at " + to_string(hook_->site()) + " returned shape " + to_string(out.shape()) +
                          " for input " + to_string({1, len, width}) + " (feature dimension must be kept)");
    }
    commit(out.dim(1), len);
    check_finite(out);
    return std::move(out).reshaped({out.dim(1), width});
  }

  // pattern is [Ha, len, len]; returns [Ha, G, G].
  Tensor pattern(const Tensor& p) {
    const std::size_t heads = p.dim(0), len = p.dim(1);
    Tensor out = hook_->reduce_pattern(p.reshaped({1, heads, len, len}));
    if (out.rank() != 4 || out.dim(0) != 1 || out.dim(1) != heads || out.dim(2) != out.dim(3)) {
      throw ContractError("hook at " + to_string(hook_->site()) + " returned pattern shape " +
                          to_string(out.shape()));
    }
    commit(out.dim(2), len);
    check_finite(out);
    return std::move(out).reshaped({heads, out.dim(2), out.dim(3)});
  }

 private:
  void commit(std::size_t grouped, std::size_t len) {
    if (grouped == 0 || grouped > len) {
      throw ContractError("hook at " + to_string(hook_->site()) + " produced sequence length " +
                          std::to_string(grouped) + " from " + std::to_string(len));
    }
    if (grouped_ && *grouped_ != grouped) {
      throw ContractError("hook at " + to_string(hook_->site()) + " produced inconsistent lengths " +
                          std::to_string(*grouped_) + " and " + std::to_string(grouped));
    }
    grouped_ = grouped;
  }

  void check_finite(const Tensor& t) const {
    if (!t.all_finite()) throw ContractError("hook at " + to_string(hook_->site()) + " produced non-finite values");
  }

  const ActivationHook* hook_;
  std::optional<std::size_t> grouped_;
};

Tensor embed(const Model& model, std::span<const TokenId> tokens) {
  const std::size_t d = model.config().d_model;
  Tensor x({tokens.size(), d});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const float* te = model.token_embedding().data() + static_cast<std::size_t>(tokens[t]) * d;
    const float* pe = model.position_embedding().data() + t * d;
    for (std::size_t c = 0; c < d; ++c) x.at(t, c) = te[c] + pe[c];
  }
  return x;
}

void record(ForwardResult& result, const ForwardOptions& opt, std::size_t layer, Component c, const Tensor& t) {
  if (!opt.capture) return;
  Shape shape{1};
  shape.insert(shape.end(), t.shape().begin(), t.shape().end());
  result.captures.push_back({{layer, c}, t.reshaped(std::move(shape))});
}

}  // namespace

ForwardResult forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& opt) {
  const ModelConfig& cfg = model.config();
  if (tokens.empty()) throw ContractError("forward: empty token sequence");
  if (tokens.size() > cfg.max_positions) {
    throw ContractError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_positions " +
                        std::to_string(cfg.max_positions));
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw ContractError("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  HookRunner hook(opt.hook, cfg.n_layers);
  const Backend be = opt.backend;
  const float eps = cfg.layer_norm_epsilon;
  ForwardResult result;

  // Positions are added once here and never re-indexed after a reduction.
  Tensor x = embed(model, tokens);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const Model::Layer& w = model.layers()[l];

    Tensor h = kernels::layer_norm(be, x, w.ln1_gamma, w.ln1_beta, eps);
    Tensor qkv = kernels::linear(be, h, w.attn_weight, w.attn_bias);
    Tensor pattern = kernels::attention_pattern(be, qkv, cfg.n_heads);
    Tensor values = kernels::value_columns(qkv);
    record(result, opt, l, Component::AttnPattern, pattern);
    if (hook.at(l, Component::AttnPattern)) {
      pattern = hook.pattern(pattern);
      values = hook.sequence(values);
      x = hook.sequence(x);
    }
    Tensor attn = kernels::linear(be, kernels::apply_pattern(be, pattern, values), w.proj_weight, w.proj_bias);
    record(result, opt, l, Component::AttnOut, attn);
    if (hook.at(l, Component::AttnOut)) {
      attn = hook.sequence(attn);
      x = hook.sequence(x);
    }
    x = kernels::add(x, attn);

    Tensor hidden = kernels::linear(be, kernels::layer_norm(be, x, w.ln2_gamma, w.ln2_beta, eps), w.fc_weight,
                                    w.fc_bias);
    kernels::gelu(be, hidden);
    record(result, opt, l, Component::MlpOut, hidden);
    if (hook.at(l, Component::MlpOut)) {
      hidden = hook.sequence(hidden);
      x = hook.sequence(x);
    }
    x = kernels::add(x, kernels::linear(be, hidden, w.out_weight, w.out_bias));
    record(result, opt, l, Component::ResidPost, x);
    if (hook.at(l, Component::ResidPost)) x = hook.sequence(x);
  }

  const std::size_t len = x.dim(0), d = cfg.d_model;
  result.final_length = len;
  if (opt.last_position_only) {
    Tensor last({1, d});
    std::copy_n(x.data() + (len - 1) * d, d, last.data());
    x = std::move(last);
  }
  Tensor normed = kernels::layer_norm(be, x, model.final_gamma(), model.final_beta(), eps);
  const Tensor zero_bias({cfg.vocab_size});
  Tensor logits = kernels::linear(be, normed, model.unembedding(), zero_bias);
  result.logits = std::move(logits).reshaped({1, normed.dim(0), cfg.vocab_size});
  return result;
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

TokenId predict_next(const Model& model, std::span<const TokenId> tokens, const ActivationHook* hook,
                     Backend backend) {
  ForwardOptions opt;
  opt.hook = hook;
  opt.last_position_only = true;
  opt.backend = backend;
  const ForwardResult r = forward(model, tokens, opt);
  return static_cast<TokenId>(argmax(r.logits.values()));
}

}  // namespace cap
