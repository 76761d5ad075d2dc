#include "llmseg/error.hpp"
#include "llmseg/features.hpp"
#include "llmseg/util.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <thread>

using namespace llmseg;
using nlohmann::json;

namespace {

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

// Deterministic fake encoder: token j of text t holds (len(t) + j) in every channel.
json fake_text(const std::vector<std::string>& texts, std::size_t m_t, std::size_t d) {
  json out = json::array();
  for (const auto& t : texts) {
    json block = json::array();
    for (std::size_t j = 0; j < m_t; ++j) block.push_back(std::vector<double>(d, static_cast<double>(t.size() + j)));
    out.push_back(block);
  }
  return out;
}

}  // namespace

TEST_CASE("text features keep per-block token counts through a file") {
  test::TempDir tmp("feat");
  TokenTextFeatures f;
  f.tokens = {Matrix::Constant(2, 3, 1.0), Matrix::Constant(4, 3, 2.0)};
  f.descriptor_names = {"a", "b"};
  f.template_id = "T4";
  write_tensor(tmp / "t.lseg", to_tensor(f));
  const auto t = read_tensor(tmp / "t.lseg");
  CHECK(t.shape == std::vector<std::size_t>{2, 4, 3});
  const auto back = text_features_from_tensor(t);
  REQUIRE(back.tokens.size() == 2);
  CHECK(back.tokens[0] == f.tokens[0]);
  CHECK(back.tokens[1] == f.tokens[1]);
  CHECK(back.descriptor_names == f.descriptor_names);
  CHECK(back.template_id == "T4");
}

TEST_CASE("image features: grid must match the patch count") {
  PatchImageFeatures f;
  f.values = Matrix::Constant(324, 4, 0.5);
  f.grid = {18, 18};
  CHECK_NOTHROW(f.validate());
  f.values = Matrix::Constant(320, 4, 0.5);
  CHECK_THROWS_AS(f.validate(), Error);

  Tensor rank3{{2, 3, 4}, std::vector<float>(24, 1.0f), {}};
  const auto g = image_features_from_tensor(rank3);
  CHECK(g.grid == GridShape{2, 3});
  CHECK(g.values.rows() == 6);
  Tensor no_grid{{6, 4}, std::vector<float>(24, 1.0f), {}};
  CHECK_THROWS_AS(image_features_from_tensor(no_grid), Error);
}

TEST_CASE("file feature source") {
  test::TempDir tmp("ffs");
  FileFeatureSource::write_text(tmp.path(), "a photo of a cat", Matrix::Constant(3, 2, 0.25));
  FileFeatureSource src(tmp.path());
  CHECK(src.text_tokens("a photo of a cat") == Matrix::Constant(3, 2, 0.25));
  try {
    src.text_tokens("a photo of a dog");
    FAIL("expected MissingInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingInput);
  }
  PatchImageFeatures f;
  f.values = Matrix::Identity(4, 4);
  f.grid = {2, 2};
  f.source_size = {32, 32};
  FileFeatureSource::write_image(tmp.path(), "img", f);
  const auto back = src.image_features(tmp / "img.png", "img");
  CHECK(back.values == f.values);
  CHECK(back.source_size == ImageSize{32, 32});
}

TEST_CASE("embedding service wire format and cache") {
  LocalServer s;
  std::vector<std::string> received;
  std::string image_field;
  s.server.Post("/encode_text", [&](const httplib::Request& req, httplib::Response& res) {
    const auto texts = json::parse(req.body).at("texts").get<std::vector<std::string>>();
    received.insert(received.end(), texts.begin(), texts.end());
    res.set_content(json{{"features", fake_text(texts, 7, 5)}}.dump(), "application/json");
  });
  s.server.Post("/encode_image", [&](const httplib::Request& req, httplib::Response& res) {
    image_field = req.get_file_value("image").content;
    json rows = json::array();
    for (int i = 0; i < 6; ++i) rows.push_back(std::vector<double>(5, i));
    res.set_content(json{{"features", rows}, {"grid", {2, 3}}}.dump(), "application/json");
  });
  s.start();

  const std::vector<std::string> one = {"a photo of a cat"};
  const auto t = encode_text_remote(one, s.url());
  REQUIRE(t.tokens.size() == 1);
  CHECK(t.tokens[0].rows() == 7);
  CHECK(t.tokens[0].cols() == 5);
  CHECK(to_tensor(t).shape == std::vector<std::size_t>{1, 7, 5});

  test::TempDir tmp("remote");
  atomic_write_file(tmp / "x.png", "not really a png");
  RemoteFeatureSource src(s.url(), tmp / "cache");
  const std::vector<std::string> prompts = {"a", "bb", "a photo of a cat"};
  received.clear();
  const auto first = src.text_tokens_batch(prompts);
  CHECK(received == prompts);
  CHECK(first[1](0, 0) == 2.0);
  CHECK(src.service_calls() == 1);

  // Cached prompts never go back to the service; only the new one does.
  received.clear();
  const std::vector<std::string> more = {"bb", "ccc"};
  const auto second = src.text_tokens_batch(more);
  CHECK(received == std::vector<std::string>{"ccc"});
  CHECK(second[0] == first[1]);

  const auto img = src.image_features(tmp / "x.png", "x");
  CHECK(image_field == "not really a png");
  CHECK(img.grid == GridShape{2, 3});
  const auto calls = src.service_calls();
  const auto again = src.image_features(tmp / "x.png", "x");
  CHECK(src.service_calls() == calls);
  CHECK(again.values == img.values);
}

TEST_CASE("service reporting a grid that disagrees with m_i is rejected") {
  LocalServer s;
  s.server.Post("/encode_image", [&](const httplib::Request&, httplib::Response& res) {
    json rows = json::array();
    for (int i = 0; i < 320; ++i) rows.push_back(std::vector<double>(2, 0.0));
    res.set_content(json{{"features", rows}, {"grid", {18, 18}}}.dump(), "application/json");
  });
  s.start();
  test::TempDir tmp("grid");
  atomic_write_file(tmp / "x.png", "x");
  try {
    encode_image_remote(tmp / "x.png", s.url());
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("unreachable service is a transport error") {
  const std::vector<std::string> one = {"x"};
  try {
    encode_text_remote(one, "http://127.0.0.1:9");
    FAIL("expected Transport");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Transport);
  }
}
