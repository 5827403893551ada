#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "metawaf/records.h"
#include "metawaf/tensor_io.h"

using namespace metawaf;

TEST_CASE("named tensors round-trip bitwise") {
  NamedTensors t;
  t.metadata = {{"kind", "test"}, {"vocab", {"a", "b"}}};
  Matrix m(2, 3);
  m << 1, -0.0, 3.5, 1e-300, 2.0 / 3.0, -7;
  t.add("m", m);
  t.add("empty", Matrix(0, 4));
  const std::string bytes = encode_tensors(t);
  CHECK(bytes.substr(0, 8) == "MWTENSOR");
  auto back = decode_tensors(bytes);
  CHECK(back.metadata == t.metadata);
  REQUIRE(back.tensors.size() == 2);
  CHECK(std::memcmp(back.at("m").data(), m.data(), sizeof(double) * 6) == 0);
  CHECK(back.at("empty").cols() == 4);
  CHECK(encode_tensors(back) == bytes);
  CHECK_THROWS_AS(back.at("missing"), std::out_of_range);
  CHECK(back.contains("m"));
}

TEST_CASE("tensor files reject corruption") {
  NamedTensors t;
  t.add("x", Matrix::Ones(2, 2));
  std::string bytes = encode_tensors(t);
  CHECK_THROWS(decode_tensors(bytes.substr(0, bytes.size() - 3)));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(decode_tensors(bad));

  auto path = std::filesystem::temp_directory_path() / "metawaf_tensor_test.bin";
  write_tensors(path, t);
  CHECK(read_tensors(path).at("x") == Matrix::Ones(2, 2));
  std::filesystem::remove(path);
  CHECK_THROWS(read_tensors(path));
}

TEST_CASE("request records are line-delimited JSON") {
  RequestRecord r{{"shop", "POST", "/cart?id=3", "qty=2", {}}, true};
  const std::string line = record_to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(record_from_json_line(line) == r);

  RequestRecord unlabeled{{"shop", "GET", "/", "", {}}, std::nullopt};
  CHECK(record_to_json_line(unlabeled).find("label") == std::string::npos);
  CHECK(record_from_json_line(record_to_json_line(unlabeled)) == unlabeled);

  auto minimal = record_from_json_line(R"({"url":"/a?b=c"})");
  CHECK(minimal.request.url == "/a?b=c");
  CHECK_FALSE(minimal.is_attack);
  CHECK_THROWS(record_from_json_line(R"({"url":"/a","label":"maybe"})"));

  std::stringstream stream;
  write_records(stream, {r, unlabeled});
  stream.seekg(0);
  auto all = read_records(stream);
  CHECK(all.size() == 2);
  CHECK(all[1] == unlabeled);

  std::stringstream broken("{\"url\":\"/a\"}\nnot json\n");
  CHECK_THROWS_WITH(read_records(broken), doctest::Contains("line 2"));
}
