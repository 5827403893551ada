#include "metawaf/records.h"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace metawaf {

std::string record_to_json_line(const RequestRecord& record) {
  nlohmann::ordered_json j;
  j["domain"] = record.request.domain_id;
  j["method"] = record.request.method;
  j["url"] = record.request.url;
  j["body"] = record.request.body;
  if (record.is_attack) j["label"] = *record.is_attack ? "attack" : "benign";
  return j.dump();
}

RequestRecord record_from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  RequestRecord r;
  r.request.domain_id = j.value("domain", "");
  r.request.method = j.value("method", "GET");
  r.request.url = j.at("url").get<std::string>();
  r.request.body = j.value("body", "");
  r.request.content_type = j.value("content_type", "");
  if (j.contains("label")) {
    const auto label = j.at("label").get<std::string>();
    if (label != "attack" && label != "benign") throw std::runtime_error("unknown label: " + label);
    r.is_attack = label == "attack";
  }
  return r;
}

std::vector<RequestRecord> read_records(std::istream& in) {
  std::vector<RequestRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("record line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<RequestRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_records(in);
}

void write_records(std::ostream& out, const std::vector<RequestRecord>& records) {
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

void write_records(const std::filesystem::path& path, const std::vector<RequestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_records(out, records);
}

}  // namespace metawaf
