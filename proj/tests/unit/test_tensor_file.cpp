#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>

#include "llmseg/error.hpp"
#include "llmseg/tensor_file.hpp"
#include "llmseg/util.hpp"
#include "test_support.hpp"

using namespace llmseg;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidArgument;
}

Tensor random_tensor(test::Gen& g) {
  Tensor t;
  const auto rank = g.size(1, 4);
  for (std::size_t i = 0; i < rank; ++i) t.shape.push_back(g.size(1, 6));
  t.values.resize(t.element_count());
  for (auto& v : t.values) v = static_cast<float>(g.real(-1e6, 1e6));
  t.meta = {{"k", g.size(0, 100)}};
  return t;
}

}  // namespace

TEST_CASE("write then read a 2x3 tensor gives identical bytes") {
  test::TempDir tmp("tensor");
  Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6.5f}, {{"note", "x"}}};
  write_tensor(tmp / "a.lseg", t);
  const auto back = read_tensor(tmp / "a.lseg");
  CHECK(back.shape == t.shape);
  CHECK(back.values == t.values);
  CHECK(back.meta == t.meta);
  write_tensor(tmp / "b.lseg", back);
  CHECK(read_file(tmp / "a.lseg") == read_file(tmp / "b.lseg"));
}

TEST_CASE("round trip is bit exact for random shapes (property)") {
  test::Gen g(3);
  for (int i = 0; i < 200; ++i) {
    auto t = random_tensor(g);
    const auto bytes = encode_tensor(t);
    const auto back = decode_tensor(bytes);
    REQUIRE(back.shape == t.shape);
    CHECK(std::memcmp(back.values.data(), t.values.data(), 4 * t.values.size()) == 0);
    CHECK(encode_tensor(back) == bytes);
  }
}

TEST_CASE("corrupt files are rejected") {
  Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6}, {}};
  const auto bytes = encode_tensor(t);
  CHECK(code_of([&] { decode_tensor(bytes.substr(0, bytes.size() - 4)); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { decode_tensor(bytes + "abcd"); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { decode_tensor("XXXX" + bytes.substr(4)); }) == ErrorCode::Format);
  CHECK(code_of([&] { decode_tensor(bytes.substr(0, 10)); }) == ErrorCode::Format);

  auto bumped = bytes;
  bumped[4] = 2;  // version
  CHECK(code_of([&] { decode_tensor(bumped); }) == ErrorCode::Format);

  // Same header length, different dtype.
  auto f64 = bytes;
  const auto pos = f64.find("f32le");
  REQUIRE(pos != std::string::npos);
  f64.replace(pos, 5, "f64le");
  CHECK(code_of([&] { decode_tensor(f64); }) == ErrorCode::UnsupportedDtype);

  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  CHECK(code_of([&] { decode_tensor(nan); }) == ErrorCode::NonFinite);

  Tensor inf{{1}, {std::numeric_limits<float>::infinity()}, {}};
  CHECK(code_of([&] { encode_tensor(inf); }) == ErrorCode::NonFinite);
  Tensor wrong{{2, 2}, {1, 2, 3}, {}};
  CHECK(code_of([&] { encode_tensor(wrong); }) == ErrorCode::ShapeMismatch);
  Tensor rank5{{1, 1, 1, 1, 1}, {1}, {}};
  CHECK(code_of([&] { encode_tensor(rank5); }) == ErrorCode::Format);
}
