#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "attrprompt/autodiff.hpp"
#include "attrprompt/param_store.hpp"
#include "attrprompt/rng.hpp"
#include "attrprompt/text_encoder.hpp"

// Adaptive visual attribute enhancement: text-guided residual cross-attention
// from the visual attribute prompts onto the textual prompts of the most
// similar candidate classes.
namespace attrprompt::avae {

struct AvaeConfig {
  std::size_t vision_width = 32;  // d_v
  std::size_t embed_dim = 32;     // d
  std::size_t key_dim = 32;       // d_K
};

inline constexpr const char* kQueryParam = "avae.wq";  // d_v x d_K
inline constexpr const char* kKeyParam = "avae.wk";    // d x d_K
inline constexpr const char* kValueParam = "avae.wv";  // d x d_v

void init_params(ParamStore& store, Rng& rng, const AvaeConfig& config, double init_std);

struct CandidateSet {
  std::vector<std::size_t> class_ids;  // best first
  Tensor g_prime;                      // (lambda' N) x d, rows by (rank, attribute)
};

// Class ids ordered by cosine(query, class_embedding) descending, ties to the
// lower id.
std::vector<std::size_t> rank_classes(const Tensor& query,
                                      std::span<const text::EncodedPromptSet> sets);

// Top min(lambda, C) classes for a CLS feature already projected into the
// joint space.
CandidateSet select_candidates(const Tensor& cls_joint,
                               std::span<const text::EncodedPromptSet> sets,
                               std::size_t lambda);

// u~_i = u_i + sum_j softmax_j(u_i W_Q (g_j W_K)^T / sqrt(d_K)) g_j W_V.
ad::Var enhance(ad::Tape& tape, const ParamStore& store, ad::Var prompts, ad::Var g_prime);

struct Enhancement {
  Tensor prompts;  // M x d_v
  Tensor weights;  // M x (lambda' N)
};

Enhancement enhance(const ParamStore& store, const Tensor& prompts, const Tensor& g_prime);

}  // namespace attrprompt::avae
