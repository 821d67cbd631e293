#include "cap/cap_hook.hpp"

#include "cap/errors.hpp"

namespace cap {

CapHook::CapHook(HookSite site, Protocol protocol, SegmentRanges ranges, HookKind kind, bool row_stochastic)
    : site_(site), protocol_(protocol), ranges_(std::move(ranges)), kind_(kind), row_stochastic_(row_stochastic) {}

CapHook CapHook::for_site(HookSite site, Protocol protocol, SegmentRanges ranges, bool row_stochastic) {
  const HookKind kind = site.component == Component::AttnPattern ? HookKind::Pattern : HookKind::Sequence;
  return CapHook(site, protocol, std::move(ranges), kind, row_stochastic);
}

Tensor CapHook::reduce_sequence(const Tensor& x) const { return pool_1d(x, ranges_, protocol_, Backend::Serial); }

Tensor CapHook::reduce_pattern(const Tensor& pattern) const {
  if (kind_ != HookKind::Pattern) throw ContractError("sequence CAP hook cannot pool an attention pattern");
  if (row_stochastic_) return pool_2d_row_stochastic(pattern, ranges_, Backend::Serial);
  return pool_2d(pattern, ranges_, protocol_, Backend::Serial);
}

HookedForward install(const Model& model, const CapHook& hook, std::size_t prompt_length, Backend backend) {
  const HookSite site = hook.site();
  const bool pattern_site = site.component == Component::AttnPattern;
  if (pattern_site && hook.kind() != HookKind::Pattern) {
    throw ContractError("a sequence CAP hook cannot be installed on " + to_string(site));
  }
  if (!pattern_site && hook.kind() != HookKind::Sequence) {
    throw ContractError("a pattern CAP hook cannot be installed on " + to_string(site));
  }
  if (site.layer >= model.config().n_layers) {
    throw ContractError("hook layer " + std::to_string(site.layer) + " outside a " +
                        std::to_string(model.config().n_layers) + "-layer model");
  }
  hook.ranges().validate(prompt_length);
  return HookedForward(model, hook, prompt_length, backend);
}

void install(const HookedForward& hooked, const CapHook& hook, std::size_t, Backend) {
  throw ContractError("cannot stack " + to_string(hook.site()) + " on a forward already hooked at " +
                      to_string(hooked.hook().site()));
}

void HookedForward::check_length(std::size_t n) const {
  if (n != prompt_length_) {
    throw ContractError("hook was installed for " + std::to_string(prompt_length_) + " tokens, got " +
                        std::to_string(n));
  }
}

ForwardResult HookedForward::forward(std::span<const TokenId> tokens, bool capture, bool last_position_only) const {
  check_length(tokens.size());
  ForwardOptions opt;
  opt.hook = hook_;
  opt.capture = capture;
  opt.last_position_only = last_position_only;
  opt.backend = backend_;
  return cap::forward(*model_, tokens, opt);
}

TokenId HookedForward::predict_next(std::span<const TokenId> tokens) const {
  check_length(tokens.size());
  return cap::predict_next(*model_, tokens, hook_, backend_);
}

}  // namespace cap
