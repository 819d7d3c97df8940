/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The usqa3d Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef USQA_ERROR_HPP
#define USQA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace usqa {

enum class ErrorKind {
  kInvalidInput,
  kOutOfRange,
  kDegenerateConfiguration,
  kDegenerateSignal,
  kDegenerateHistogram,
  kDegenerateComponent,
  kIo,
};

/// Single exception type for the library; `kind()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace usqa

#endif /* USQA_ERROR_HPP */
