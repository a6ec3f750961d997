#include <gtest/gtest.h>

#include "attrprompt/gradcheck.hpp"
#include "attrprompt/text_encoder.hpp"
#include "unit/test_support.hpp"

namespace attrprompt::text {
namespace {

using attrprompt::testing::random_matrix;
using attrprompt::testing::TempDir;

TextEncoderConfig small_config() {
  TextEncoderConfig c;
  c.vocab_size = 64;
  c.width = 8;
  c.layers = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.max_len = 10;
  c.n_ctx = 2;
  c.embed_dim = 6;
  return c;
}

AttributeTable flowers() {
  return {{{"rose", {"red petals", "thorny stem", "layered bloom", "green leaves", "sweet scent"}},
           {"sun flower", {"yellow petals", "tall stem", "dark centre", "large head"}},
           {"daisy", {"white petals", "yellow centre", "short stem", "small head"}}}};
}

TEST(Vocabulary, EmptyTextHasNoTokens) {
  Vocabulary v(64);
  EXPECT_TRUE(v.tokenize("").empty());
  EXPECT_TRUE(v.tokenize("  \t,. ").empty());
}

TEST(Vocabulary, CaseAndPunctuationAreIgnored) {
  Vocabulary v(1024);
  EXPECT_EQ(v.tokenize("White Petals"), v.tokenize("white petals"));
  EXPECT_EQ(v.tokenize("white, petals!"), v.tokenize("white petals"));
  EXPECT_EQ(v.tokenize("a b c").size(), 3u);
}

TEST(Vocabulary, IdsAreStableAndNeverZero) {
  Vocabulary v(16);
  const auto a = v.tokenize("the quick brown fox jumps over the lazy dog");
  EXPECT_EQ(a, v.tokenize("the quick brown fox jumps over the lazy dog"));
  EXPECT_EQ(a[0], a[6]);
  for (auto id : a) {
    EXPECT_GE(id, 1u);
    EXPECT_LT(id, 16u);
  }
  EXPECT_ERROR_KIND(Vocabulary(1), ErrorKind::kConfig);
}

TEST(Attributes, FileRoundTrip) {
  TempDir dir;
  save_attributes(flowers(), dir / "attributes.json");
  const auto back = load_attributes(dir / "attributes.json");
  ASSERT_EQ(back.classes.size(), 3u);
  EXPECT_EQ(back.classes[1].name, "sun flower");
  EXPECT_EQ(back.classes[0].attributes, flowers().classes[0].attributes);
  EXPECT_ERROR_KIND(load_attributes(dir / "absent.json"), ErrorKind::kIo);
}

TEST(BuildPrompts, CountsAndLayout) {
  const auto cfg = small_config();
  Vocabulary v(cfg.vocab_size);
  const auto prompts = build_prompts({"rose", "daisy"}, flowers(), 4, v, cfg);
  ASSERT_EQ(prompts.size(), 8u);
  EXPECT_EQ(prompts[5].class_id, 1u);
  EXPECT_EQ(prompts[5].attribute_index, 1u);
  // [ctx | "daisy" | "yellow centre"]
  EXPECT_EQ(prompts[5].n_ctx, 2u);
  EXPECT_EQ(prompts[5].token_ids,
            (std::vector<std::uint32_t>{v.token_id("daisy"), v.token_id("yellow"), v.token_id("centre")}));
  EXPECT_EQ(prompts[5].length(), 5u);
}

TEST(BuildPrompts, SinglePrompt) {
  AttributeTable t{{{"cat", {"whiskers"}}}};
  EXPECT_EQ(build_prompts({"cat"}, t, 1, Vocabulary(64), small_config()).size(), 1u);
}

TEST(BuildPrompts, LongDescriptionsAreTruncated) {
  AttributeTable t{{{"cat", {"one two three four five six seven eight nine ten"}}}};
  const auto p = build_prompts({"cat"}, t, 1, Vocabulary(64), small_config());
  EXPECT_EQ(p[0].length(), small_config().max_len);
}

TEST(BuildPrompts, ShortOrMissingClassesNameTheClass) {
  const auto cfg = small_config();
  Vocabulary v(cfg.vocab_size);
  try {
    build_prompts({"rose", "tulip"}, flowers(), 4, v, cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInsufficientAttributes);
    EXPECT_NE(std::string(e.what()).find("tulip"), std::string::npos);
  }
  EXPECT_ERROR_KIND(build_prompts({"rose", "daisy"}, flowers(), 5, v, cfg),
                    ErrorKind::kInsufficientAttributes);
}

class Encoder : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    encoder.init_params(store, rng, 0.3);
    prompts = build_prompts(names, flowers(), 3, encoder.vocab(), encoder.config());
  }
  TextEncoder encoder{small_config()};
  ParamStore store;
  std::vector<std::string> names{"rose", "sun flower", "daisy"};
  std::vector<TextualAttributePrompt> prompts;
};

TEST_F(Encoder, RowsAndClassEmbeddingsAreUnit) {
  const auto sets = encoder.encode_all(store, prompts, 3);
  ASSERT_EQ(sets.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(sets[k].class_id, k);
    ASSERT_EQ(sets[k].rows.rows(), 3u);
    ASSERT_EQ(sets[k].rows.cols(), 6u);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(l2_norm(sets[k].rows.row(n)), 1.0, 1e-9);
    EXPECT_NEAR(l2_norm(sets[k].class_embedding.data()), 1.0, 1e-9);
  }
}

TEST_F(Encoder, ClassEmbeddingIsTheNormalizedMean) {
  const auto sets = encoder.encode_all(store, prompts, 3);
  Tensor mean = Tensor::matrix(1, 6);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 6; ++j) mean.at(0, j) += sets[1].rows.at(n, j) / 3.0;
  EXPECT_LE(max_abs_diff(l2_normalize_rows(mean), sets[1].class_embedding), 1e-12);
}

TEST_F(Encoder, SinglePromptSetEqualsItsRow) {
  const auto one = build_prompts(names, flowers(), 1, encoder.vocab(), encoder.config());
  for (const auto& s : encoder.encode_all(store, one, 3))
    EXPECT_LE(max_abs_diff(s.class_embedding, s.rows), 1e-15);
}

TEST_F(Encoder, DeterministicAndAttributeSensitive) {
  ad::Tape t1, t2;
  const Tensor a = encoder.encode_prompt(t1, store, prompts[0]).value();
  const Tensor b = encoder.encode_prompt(t2, store, prompts[0]).value();
  EXPECT_EQ(a, b);
  ad::Tape t3;
  EXPECT_FALSE(a == encoder.encode_prompt(t3, store, prompts[1]).value());
}

TEST_F(Encoder, ClassOrderPermutesTheOutputs) {
  std::vector<std::string> reversed(names.rbegin(), names.rend());
  const auto p2 = build_prompts(reversed, flowers(), 3, encoder.vocab(), encoder.config());
  const auto a = encoder.encode_all(store, prompts, 3);
  const auto b = encoder.encode_all(store, p2, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a[k].rows, b[2 - k].rows);
    EXPECT_EQ(a[k].class_embedding, b[2 - k].class_embedding);
  }
}

TEST_F(Encoder, OverlongPromptIsRejected) {
  TextualAttributePrompt p = prompts[0];
  p.token_ids.assign(20, 3);
  ad::Tape t;
  EXPECT_ERROR_KIND(encoder.encode_prompt(t, store, p), ErrorKind::kInvalidArgument);
}

TEST_F(Encoder, ContextVectorsReceiveGradient) {
  Rng rng(5);
  const Tensor probe = random_matrix(rng, 1, 6);
  auto build = [&](ad::Tape& t) {
    return ad::sum(ad::mul(encoder.encode_prompt(t, store, prompts[4]), t.constant(probe)));
  };
  ad::Tape t;
  t.backward(build(t), store);
  EXPECT_GT(l2_norm(store.get(TextEncoder::kContextParam).grad.data()), 1e-8);
  const auto r = finite_diff_check(
      store, TextEncoder::kContextParam,
      [&] {
        ad::Tape u;
        return build(u).value()[0];
      },
      1e-6, 1e-5);
  EXPECT_TRUE(r.pass) << r.max_rel_err;
}

}  // namespace
}  // namespace attrprompt::text
