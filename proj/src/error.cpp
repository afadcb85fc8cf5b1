// Copyright 2026 The Charge Authors. All Rights Reserved.
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

#include "charge/error.hpp"

namespace charge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyBundle: return "EmptyBundle";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::TemplateSlotMissing: return "TemplateSlotMissing";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::StructuredParseError: return "StructuredParseError";
    case ErrorCode::UnknownKeypoint: return "UnknownKeypoint";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::PoolExhausted: return "PoolExhausted";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownRef: return "UnknownRef";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::RosterTooSmall: return "RosterTooSmall";
    case ErrorCode::NoSuchAssignment: return "NoSuchAssignment";
    case ErrorCode::AlreadySubmitted: return "AlreadySubmitted";
    case ErrorCode::MissingRejectReason: return "MissingRejectReason";
    case ErrorCode::IncompleteReviews: return "IncompleteReviews";
    case ErrorCode::InsufficientDecisions: return "InsufficientDecisions";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingStageInput: return "MissingStageInput";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace charge
