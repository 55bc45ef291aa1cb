// Copyright 2026 The QFTS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace qfts {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: dataset records, markdown tables, rating matrices.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid or contradictory configuration, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Transport-level failure talking to a completion endpoint.
class NetworkError : public Error {
 public:
  using Error::Error;
};

// The endpoint rejected the credential. Never retried.
class AuthError : public NetworkError {
 public:
  using NetworkError::NetworkError;
};

// Offline mode was requested and the response cache has no entry.
class CacheMissOffline : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (empty reference, zero variance).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace qfts
