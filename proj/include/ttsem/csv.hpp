#ifndef TTSEM_CSV_HPP
#define TTSEM_CSV_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ttsem::csv {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

double parse_double(std::string_view text);

/// Splits one CSV line on commas (no quoting; the formats here never need it).
std::vector<std::string_view> split_line(std::string_view line);

/// Writes `fields` joined by commas and terminated by LF.
void write_row(std::ostream& os, const std::vector<std::string>& fields);

/// 64-bit FNV-1a, used to fingerprint datasets in logs.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace ttsem::csv

#endif  // TTSEM_CSV_HPP
