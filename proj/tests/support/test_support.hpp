#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cap/model.hpp"
#include "cap/pooling.hpp"
#include "cap/segment_ranges.hpp"
#include "cap/tokenizer.hpp"

namespace cap::testing {

std::filesystem::path source_dir();
std::filesystem::path fixture(const std::string& relative);
std::filesystem::path gpt2_vocab();
std::filesystem::path gpt2_merges();

/// The GPT-2 tokenizer, loaded once.
const BpeTokenizer& gpt2_tokenizer();

/// Fresh scratch directory under the build tree.
std::filesystem::path scratch_dir(const std::string& name);

ModelConfig synthetic_config(std::size_t vocab = 64);

/// Gaussian weights (std 0.2), unit LayerNorm gains, small biases; names follow
/// the GPT-2 checkpoint layout.
TensorMap synthetic_tensors(const ModelConfig& config, std::uint32_t seed);
Model synthetic_model(const ModelConfig& config, std::uint32_t seed);

/// Final LayerNorm gain zeroed: logits no longer depend on the input.
Model constant_logit_model(const ModelConfig& config, std::uint32_t seed);

/// Random sorted disjoint ranges over [0, k); singletons possible.
SegmentRanges random_ranges(std::mt19937& rng, std::size_t k, bool allow_singletons = true);

Tensor random_tensor(std::mt19937& rng, Shape shape, bool integer_valued);

/// Random valid UTF-8, biased towards characters the pre-tokenizer treats specially.
std::string random_utf8(std::mt19937& rng);

// Brute-force references that share no code with the library.
namespace oracle {

/// Group membership by scanning every range for every token.
std::vector<std::vector<std::size_t>> groups(std::size_t k, const SegmentRanges& ranges);

Tensor pool_1d(const Tensor& x, const SegmentRanges& ranges, Protocol protocol);
Tensor pool_2d(const Tensor& p, const SegmentRanges& ranges, Protocol protocol);

}  // namespace oracle

}  // namespace cap::testing
