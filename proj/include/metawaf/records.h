#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "metawaf/request_codec.h"

namespace metawaf {

/// One line of a request log: {"domain", "method", "url", "body", "label"?}.
/// `label` is "benign" or "attack" and only appears in evaluation fixtures.
struct RequestRecord {
  RawRequest request;
  std::optional<bool> is_attack;

  bool operator==(const RequestRecord& o) const {
    return request.domain_id == o.request.domain_id && request.method == o.request.method &&
           request.url == o.request.url && request.body == o.request.body && is_attack == o.is_attack;
  }
};

std::string record_to_json_line(const RequestRecord& record);
RequestRecord record_from_json_line(std::string_view line);

std::vector<RequestRecord> read_records(std::istream& in);
std::vector<RequestRecord> read_records(const std::filesystem::path& path);
void write_records(std::ostream& out, const std::vector<RequestRecord>& records);
void write_records(const std::filesystem::path& path, const std::vector<RequestRecord>& records);

}  // namespace metawaf
