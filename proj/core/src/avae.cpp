#include "attrprompt/avae.hpp"

#include <algorithm>
#include <numeric>

#include "attrprompt/error.hpp"

namespace attrprompt::avae {

void init_params(ParamStore& store, Rng& rng, const AvaeConfig& config, double init_std) {
  require(config.key_dim > 0, ErrorKind::kConfig, "avae key dimension must be positive");
  store.add_normal(kQueryParam, {config.vision_width, config.key_dim}, rng, init_std);
  store.add_normal(kKeyParam, {config.embed_dim, config.key_dim}, rng, init_std);
  store.add_normal(kValueParam, {config.embed_dim, config.vision_width}, rng, init_std);
}

std::vector<std::size_t> rank_classes(const Tensor& query,
                                      std::span<const text::EncodedPromptSet> sets) {
  require(!sets.empty(), ErrorKind::kInvalidArgument, "no prompt sets to rank");
  const Tensor q = l2_normalize(query);
  std::vector<double> score(sets.size());
  for (std::size_t k = 0; k < sets.size(); ++k)
    score[k] = dot(q.data(), l2_normalize(sets[k].class_embedding).data());
  std::vector<std::size_t> order(sets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  for (auto& k : order) k = sets[k].class_id;
  return order;
}

CandidateSet select_candidates(const Tensor& cls_joint,
                               std::span<const text::EncodedPromptSet> sets,
                               std::size_t lambda) {
  require(lambda >= 1, ErrorKind::kInvalidArgument, "lambda must be >= 1");
  CandidateSet out;
  out.class_ids = rank_classes(cls_joint, sets);
  out.class_ids.resize(std::min(lambda, out.class_ids.size()));

  const std::size_t d = sets.front().rows.cols();
  std::size_t total = 0;
  for (auto id : out.class_ids) {
    auto it = std::find_if(sets.begin(), sets.end(),
                           [id](const auto& s) { return s.class_id == id; });
    total += it->rows.rows();
  }
  out.g_prime = Tensor::matrix(total, d);
  std::size_t r = 0;
  for (auto id : out.class_ids) {
    const auto& rows = std::find_if(sets.begin(), sets.end(),
                                    [id](const auto& s) { return s.class_id == id; })->rows;
    std::copy(rows.data().begin(), rows.data().end(),
              out.g_prime.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    r += rows.rows();
  }
  return out;
}

ad::Var enhance(ad::Tape& tape, const ParamStore& store, ad::Var prompts, ad::Var g_prime) {
  require(g_prime.valid() && g_prime.rows() >= 1, ErrorKind::kInvalidArgument,
          "enhance: empty candidate set");
  ad::Var q = ad::matmul(prompts, tape.param(store, kQueryParam));
  ad::Var k = ad::matmul(g_prime, tape.param(store, kKeyParam));
  ad::Var v = ad::matmul(g_prime, tape.param(store, kValueParam));
  return ad::add(prompts, ad::scaled_dot_attention(q, k, v));
}

Enhancement enhance(const ParamStore& store, const Tensor& prompts, const Tensor& g_prime) {
  require(g_prime.rows() >= 1 && !g_prime.empty(), ErrorKind::kInvalidArgument,
          "enhance: empty candidate set");
  const Tensor q = matmul(prompts, store.get(kQueryParam).value);
  const Tensor k = matmul(g_prime, store.get(kKeyParam).value);
  const Tensor v = matmul(g_prime, store.get(kValueParam).value);
  Enhancement out;
  out.weights = attention_weights(q, k);
  out.prompts = matmul(out.weights, v);
  for (std::size_t i = 0; i < out.prompts.size(); ++i) out.prompts[i] += prompts[i];
  return out;
}

}  // namespace attrprompt::avae
