#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "partrain/trainer.hpp"

namespace partrain::cli {

inline constexpr std::string_view kMetricsHeader =
    "run_id,phase,submodel,epoch,train_loss,eval_loss,eval_errors,wall_seconds,"
    "cumulative_seconds";

inline constexpr std::string_view kDiversityHeader =
    "run_id,sample,label,submodel,correct_prob,predicted";

/// Quotes a field when it contains a comma, quote, CR or LF; embedded quotes
/// are doubled.
std::string csv_escape(std::string_view field);

/// Splits one record. Throws FormatError on an unterminated quote.
std::vector<std::string> csv_split(std::string_view record);

/// Shortest text that parses back to the same double. NaN is written empty.
std::string format_double(double v);

/// "merged" for the full model, the index otherwise.
std::string submodel_label(int submodel);

std::string metrics_row(const MetricsRow& row);

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows, bool header);

/// Parses a metrics.csv written by write_metrics. Throws FormatError.
std::vector<MetricsRow> read_metrics(std::istream& in);

}  // namespace partrain::cli
