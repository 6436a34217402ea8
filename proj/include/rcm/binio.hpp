// SPDX-License-Identifier: Apache-2.0
//
// rcm - pretrained realistic channel model toolkit
// Copyright (C) 2026 the rcm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef RCM_BINIO_HPP
#define RCM_BINIO_HPP

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

// All binary file formats in this project are little-endian.
static_assert(std::endian::native == std::endian::little,
              "rcm binary I/O assumes a little-endian host");

template <typename T>
inline void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& is, const char* what = "binary field") {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw data_format_error(std::string("truncated file while reading ") + what);
  return value;
}

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const char* what) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw data_format_error(std::string("bad numeric field in ") + what + ": '" +
                            std::string(text) + "'");
  return value;
}

inline long long parse_int(std::string_view text, const char* what) {
  long long value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw data_format_error(std::string("bad integer field in ") + what + ": '" +
                            std::string(text) + "'");
  return value;
}

}  // namespace rcm

#endif  // RCM_BINIO_HPP
