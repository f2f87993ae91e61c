#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace gemplus::csv {

// Minimal RFC-4180 reader: quoted fields, doubled quotes, embedded newlines,
// CRLF or LF line endings.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Next record, or nullopt at end of input. Line numbers are 1-based and
  // refer to the first physical line of the record.
  std::optional<std::vector<std::string>> next();
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  std::size_t physical_line_ = 1;
  std::size_t record_line_ = 0;
};

void write_field(std::ostream& os, std::string_view field);
void write_record(std::ostream& os, const std::vector<std::string>& fields);

}  // namespace gemplus::csv
