#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cap/parallel.hpp"
#include "cap/safetensors.hpp"
#include "cap/tensor.hpp"

namespace cap {

using TokenId = std::int32_t;

/// Architecture descriptor of a GPT-2-family decoder (learned absolute
/// positions, tanh GELU, pre-LayerNorm blocks).
struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t d_mlp = 0;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 0;
  float layer_norm_epsilon = 1e-5f;
  std::string activation = "gelu";
  std::string positional_scheme = "learned-absolute";

  std::size_t d_head() const { return n_heads ? d_model / n_heads : 0; }

  /// Throws ConfigError on non-positive counts, d_model not divisible by
  /// n_heads, or an unsupported activation / positional scheme.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parses the JSON config schema (see README). Standard GPT-2 config.json keys
/// (n_layer, n_embd, n_head, n_inner, n_positions) are accepted as aliases.
ModelConfig parse_model_config(std::string_view json_text);
ModelConfig load_model_config(const std::filesystem::path& path);
std::string serialize_model_config(const ModelConfig& config);

enum class Component { AttnOut, MlpOut, ResidPost, AttnPattern };

std::string to_string(Component c);
Component parse_component(const std::string& name);

/// A named point in the forward pass. Feature widths: attn_out d_model,
/// mlp_out d_mlp (post-activation hidden), resid_post d_model; attn_pattern is
/// the [heads, K, K] post-softmax weights.
struct HookSite {
  std::size_t layer = 0;
  Component component = Component::ResidPost;

  friend bool operator==(const HookSite&, const HookSite&) = default;
};

std::string to_string(const HookSite& site);

/// Intercepts one site and shortens the sequence from K to G.
///
/// The runtime calls reduce_sequence on the site's activation and on every other
/// tensor that must follow it to the new length: the residual stream for
/// intra-block sites, and the value vectors for attn_pattern. Implementations
/// must be pure; one hook may serve many concurrent forward passes.
class ActivationHook {
 public:
  virtual ~ActivationHook() = default;
  virtual HookSite site() const = 0;
  /// [B, K, F] -> [B, G, F].
  virtual Tensor reduce_sequence(const Tensor& x) const = 0;
  /// [B, Ha, K, K] -> [B, Ha, G, G]. Called only for attn_pattern sites.
  virtual Tensor reduce_pattern(const Tensor& pattern) const = 0;
};

struct ForwardOptions {
  const ActivationHook* hook = nullptr;
  bool capture = false;
  /// Compute logits for the final position only.
  bool last_position_only = false;
  Backend backend = Backend::Parallel;
};

struct Capture {
  HookSite site;
  Tensor activation;  // [1, len, F] or [1, Ha, len, len], as produced before any hook
};

struct ForwardResult {
  Tensor logits;  // [1, final_length, vocab] (or [1, 1, vocab] with last_position_only)
  std::size_t final_length = 0;
  std::vector<Capture> captures;
};

/// Immutable GPT-2-family weights. Safe to share across threads.
class Model {
 public:
  struct Layer {
    Tensor ln1_gamma, ln1_beta;
    Tensor attn_weight, attn_bias;  // [d, 3d], [3d]
    Tensor proj_weight, proj_bias;  // [d, d], [d]
    Tensor ln2_gamma, ln2_beta;
    Tensor fc_weight, fc_bias;      // [d, d_mlp], [d_mlp]
    Tensor out_weight, out_bias;    // [d_mlp, d], [d]
  };

  /// Builds a model from named tensors using standard GPT-2 checkpoint names
  /// (wte.weight, h.{i}.attn.c_attn.weight, ...; a "transformer." prefix is
  /// stripped). Throws ConfigError / LoadError naming the offending tensor.
  static Model from_tensors(const ModelConfig& config, const TensorMap& tensors);

  const ModelConfig& config() const { return config_; }
  /// FNV-1a 64 digest over parameter names, shapes and bytes, as 16 hex digits.
  const std::string& checksum() const { return checksum_; }

  const Tensor& token_embedding() const { return wte_; }
  const Tensor& position_embedding() const { return wpe_; }
  const Tensor& unembedding() const { return wte_t_; }
  const Tensor& final_gamma() const { return lnf_gamma_; }
  const Tensor& final_beta() const { return lnf_beta_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  ModelConfig config_;
  Tensor wte_, wpe_, wte_t_, lnf_gamma_, lnf_beta_;
  std::vector<Layer> layers_;
  std::string checksum_;
};

Model load_model(const std::filesystem::path& weights, const ModelConfig& config);

/// Throws ConfigError unless the tokenizer's vocabulary size matches the model.
void check_vocab_compatible(const ModelConfig& config, std::size_t tokenizer_vocab_size);

ForwardResult forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& options = {});

/// Greedy next token: argmax of the final (possibly grouped) position; ties go to
/// the lowest token id.
TokenId predict_next(const Model& model, std::span<const TokenId> tokens, const ActivationHook* hook = nullptr,
                     Backend backend = Backend::Parallel);

/// Index of the largest value; the lowest index wins ties.
std::size_t argmax(std::span<const float> values);

}  // namespace cap
