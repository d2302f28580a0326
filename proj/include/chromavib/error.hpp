#pragma once

#include <stdexcept>
#include <string>

namespace chromavib {

/// Base class for every domain error raised by the library. The CLI maps
/// these to exit status 1; anything else is treated as a usage or I/O fault.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CHROMAVIB_DEFINE_ERROR(Name)                 \
    class Name : public ::chromavib::Error {         \
    public:                                          \
        using ::chromavib::Error::Error;             \
    }

// colorimetry
CHROMAVIB_DEFINE_ERROR(DegenerateChromaticity);

// vibration
CHROMAVIB_DEFINE_ERROR(CatalogInvalid);
CHROMAVIB_DEFINE_ERROR(WeightOutOfRange);
CHROMAVIB_DEFINE_ERROR(NoFeasibleRatio);

// psychometry
CHROMAVIB_DEFINE_ERROR(DegenerateData);
CHROMAVIB_DEFINE_ERROR(ConvergenceFailure);
CHROMAVIB_DEFINE_ERROR(ProbabilityOutOfRange);
CHROMAVIB_DEFINE_ERROR(OutsideInterpolationRange);
CHROMAVIB_DEFINE_ERROR(UnknownDiameter);
CHROMAVIB_DEFINE_ERROR(CellAbsent);
CHROMAVIB_DEFINE_ERROR(RecordFormatError);

// stimulus
CHROMAVIB_DEFINE_ERROR(AnisotropicPixels);
CHROMAVIB_DEFINE_ERROR(InvalidProfile);
CHROMAVIB_DEFINE_ERROR(EmptyImage);
CHROMAVIB_DEFINE_ERROR(GeometryOverflow);
CHROMAVIB_DEFINE_ERROR(PerPixelGamutViolation);
CHROMAVIB_DEFINE_ERROR(ImageIoError);

// gazeanalysis
CHROMAVIB_DEFINE_ERROR(DegenerateConfiguration);

// session
CHROMAVIB_DEFINE_ERROR(SequenceViolation);
CHROMAVIB_DEFINE_ERROR(InvalidResponse);
CHROMAVIB_DEFINE_ERROR(StorageFailure);
CHROMAVIB_DEFINE_ERROR(DuplicateRecord);
CHROMAVIB_DEFINE_ERROR(ConfigError);

#undef CHROMAVIB_DEFINE_ERROR

}  // namespace chromavib
