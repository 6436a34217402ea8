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

#ifndef RCM_ERRORS_HPP
#define RCM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rcm {

/// Malformed or inconsistent on-disk data (bad magic, version, shape, ...).
class data_format_error : public std::runtime_error {
 public:
  explicit data_format_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values, divergence, or other numeric breakdown at run time.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

/// A special token id (PAD/UNK/CLS/SEP/MASK) was used where a channel
/// token is required.
class special_token_error : public std::invalid_argument {
 public:
  explicit special_token_error(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace rcm

#endif  // RCM_ERRORS_HPP
