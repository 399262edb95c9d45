/*
Copyright 2026 The posefit Authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace posefit {

// Error classes map to CLI exit codes: ConfigError -> 2, everything else -> 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string strprintf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  char buf[1024];
  vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return std::string(buf);
}

#define POSEFIT_CHECK(cond, msg)                                             \
  do {                                                                       \
    if (!(cond)) throw std::logic_error(std::string("check failed: ") + msg); \
  } while (0)

#define POSEFIT_CHECK_SHAPE(cond, msg)                  \
  do {                                                  \
    if (!(cond)) throw ::posefit::ShapeError(msg);      \
  } while (0)

}  // namespace posefit
