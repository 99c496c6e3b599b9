#pragma once

#include <stdexcept>
#include <string>

namespace ophmae {

// One exception type per named error condition. All derive from Error so
// callers can catch coarsely; what() carries the offending field/value.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define OPHMAE_DEFINE_ERROR(NAME)                                   \
    struct NAME : Error {                                            \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

OPHMAE_DEFINE_ERROR(NonFiniteInput);
OPHMAE_DEFINE_ERROR(DegenerateRange);
OPHMAE_DEFINE_ERROR(PairMismatch);
OPHMAE_DEFINE_ERROR(ShapeMismatch);
OPHMAE_DEFINE_ERROR(InvalidTarget);
OPHMAE_DEFINE_ERROR(InvalidRatio);
OPHMAE_DEFINE_ERROR(InvalidK);
OPHMAE_DEFINE_ERROR(DimMismatch);
OPHMAE_DEFINE_ERROR(MaskMismatch);
OPHMAE_DEFINE_ERROR(IndexMismatch);
OPHMAE_DEFINE_ERROR(NegativeWeight);
OPHMAE_DEFINE_ERROR(MissingModality);
OPHMAE_DEFINE_ERROR(InvalidSchedule);
OPHMAE_DEFINE_ERROR(EmptyDataset);
OPHMAE_DEFINE_ERROR(LabelOutOfRange);
OPHMAE_DEFINE_ERROR(NonBinaryLabels);
OPHMAE_DEFINE_ERROR(DegenerateLabels);
OPHMAE_DEFINE_ERROR(NoPositives);
OPHMAE_DEFINE_ERROR(EmptyGroup);
OPHMAE_DEFINE_ERROR(TooFewPatients);
OPHMAE_DEFINE_ERROR(SubsetTooLarge);
OPHMAE_DEFINE_ERROR(InvalidPrevalence);
OPHMAE_DEFINE_ERROR(MissingCheckpoint);
OPHMAE_DEFINE_ERROR(TaskNotFound);
OPHMAE_DEFINE_ERROR(CheckpointCorrupt);
OPHMAE_DEFINE_ERROR(InvalidConfig);
OPHMAE_DEFINE_ERROR(IoError);

#undef OPHMAE_DEFINE_ERROR

}  // namespace ophmae
