#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "attrprompt/error.hpp"
#include "attrprompt/rng.hpp"
#include "attrprompt/tensor.hpp"

namespace attrprompt::testing {

inline Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.data()) x = rng.normal(0.0, sd);
  return t;
}

inline Tensor uniform_matrix(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string tag = info ? std::string(info->test_suite_name()) + "_" + info->name() : "t";
    path_ = std::filesystem::temp_directory_path() /
            ("attrprompt_" + tag + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace attrprompt::testing

// Asserts that `stmt` throws attrprompt::Error of the given kind.
#define EXPECT_ERROR_KIND(stmt, expected_kind)                                   \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " #expected_kind " from " #stmt;               \
    } catch (const ::attrprompt::Error& e) {                                     \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                            \
    }                                                                            \
  } while (0)
