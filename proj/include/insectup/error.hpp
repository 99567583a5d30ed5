#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace insectup {

enum class ErrorCode {
  // taxonomy
  DuplicateId,
  UnknownParent,
  RankSkip,
  CycleDetected,
  LeafNotSpecies,
  MalformedTaxonomy,
  UnknownTaxon,
  // classification
  EmptyImage,
  KeyMismatch,
  InvalidProbabilities,
  BackendUnavailable,
  EmptyDataset,
  // consensus
  InvalidHistory,
  UnknownTaxonInVote,
  MissingWeight,
  NotExpert,
  NoSuchObservation,
  AlreadyExpertResolved,
  NotResolvable,
  // demography
  OutOfRange,
  // platform
  UndecodableImage,
  OutOfRangeCoordinates,
  StorageFailure,
  ObservationQuarantined,
  BadFilter,
  BadCursor,
  BadRequest,
  Unauthorized,
  StoreLocked,
  InvalidConfig,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownParent: return "UnknownParent";
    case ErrorCode::RankSkip: return "RankSkip";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::LeafNotSpecies: return "LeafNotSpecies";
    case ErrorCode::MalformedTaxonomy: return "MalformedTaxonomy";
    case ErrorCode::UnknownTaxon: return "UnknownTaxon";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::InvalidProbabilities: return "InvalidProbabilities";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidHistory: return "InvalidHistory";
    case ErrorCode::UnknownTaxonInVote: return "UnknownTaxonInVote";
    case ErrorCode::MissingWeight: return "MissingWeight";
    case ErrorCode::NotExpert: return "NotExpert";
    case ErrorCode::NoSuchObservation: return "NoSuchObservation";
    case ErrorCode::AlreadyExpertResolved: return "AlreadyExpertResolved";
    case ErrorCode::NotResolvable: return "NotResolvable";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::UndecodableImage: return "UndecodableImage";
    case ErrorCode::OutOfRangeCoordinates: return "OutOfRangeCoordinates";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::ObservationQuarantined: return "ObservationQuarantined";
    case ErrorCode::BadFilter: return "BadFilter";
    case ErrorCode::BadCursor: return "BadCursor";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::StoreLocked: return "StoreLocked";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure surfaced by the library carries a stable code; the HTTP layer
/// and the CLI map codes onto status codes and exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return to_string(code_); }

 private:
  ErrorCode code_;
};

}  // namespace insectup
