#pragma once

#include <cstddef>
#include <span>

#include "cap/model.hpp"
#include "cap/pooling.hpp"
#include "cap/segment_ranges.hpp"

namespace cap {

/// Sequence hooks pool [B, K, F] activations; pattern hooks pool attention
/// weights and must sit on an attn_pattern site.
enum class HookKind { Sequence, Pattern };

class CapHook final : public ActivationHook {
 public:
  CapHook(HookSite site, Protocol protocol, SegmentRanges ranges, HookKind kind, bool row_stochastic = false);

  /// Kind derived from the site.
  static CapHook for_site(HookSite site, Protocol protocol, SegmentRanges ranges, bool row_stochastic = false);

  HookSite site() const override { return site_; }
  Tensor reduce_sequence(const Tensor& x) const override;
  Tensor reduce_pattern(const Tensor& pattern) const override;

  HookKind kind() const { return kind_; }
  Protocol protocol() const { return protocol_; }
  const SegmentRanges& ranges() const { return ranges_; }
  bool row_stochastic() const { return row_stochastic_; }

 private:
  HookSite site_;
  Protocol protocol_;
  SegmentRanges ranges_;
  HookKind kind_;
  bool row_stochastic_;
};

/// A model with exactly one CAP hook installed for prompts of a fixed length.
class HookedForward {
 public:
  ForwardResult forward(std::span<const TokenId> tokens, bool capture = false, bool last_position_only = false) const;
  TokenId predict_next(std::span<const TokenId> tokens) const;

  const CapHook& hook() const { return *hook_; }
  std::size_t prompt_length() const { return prompt_length_; }
  Backend backend() const { return backend_; }

 private:
  friend HookedForward install(const Model&, const CapHook&, std::size_t, Backend);
  HookedForward(const Model& model, const CapHook& hook, std::size_t length, Backend backend)
      : model_(&model), hook_(&hook), prompt_length_(length), backend_(backend) {}
  void check_length(std::size_t n) const;

  const Model* model_;
  const CapHook* hook_;
  std::size_t prompt_length_;
  Backend backend_;
};

/// Validates the hook against the model and the prompt length K, then binds
/// them. Throws ContractError on a kind/site mismatch or a layer outside the
/// model, InputError on ranges invalid for K. Both references must outlive
/// the result.
HookedForward install(const Model& model, const CapHook& hook, std::size_t prompt_length,
                      Backend backend = Backend::Parallel);

/// Hooks do not stack: one intervention layer per forward pass.
[[noreturn]] void install(const HookedForward& hooked, const CapHook& hook, std::size_t prompt_length,
                          Backend backend = Backend::Parallel);

}  // namespace cap
