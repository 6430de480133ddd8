#pragma once

// Scenario JSON parsing/validation, normalized dumps, CSV log writers, and
// the CLI entry point. The schema is documented in docs/scenario_schema.md;
// the CSV columns in docs/csv_columns.md. Agent indices are 1-based in files
// and CSV headers, 0-based everywhere in memory.

#include <string>

#include "vrb/scenario.hpp"
#include "vrb/sim_engine.hpp"

namespace vrb {

// Parses and validates scenario text (JSON, // comments allowed).
// Throws ParseError or ValidationError.
Scenario parse_scenario(const std::string& text);

Scenario load_scenario_file(const std::string& path);

// Normalized dump: every field explicit, keys sorted. parse(dump(s)) == s.
std::string dump_scenario(const Scenario& s);

// Writes agents.csv, constraints.csv, vrb.csv, inputs.csv, and audit.txt
// into out_dir (created if missing).
void write_log(const SimLog& log, const std::string& out_dir);

// Exit codes: 0 success, 1 parse/validation failure, 2 timeout or divergence.
int run_cli(int argc, char** argv);

}  // namespace vrb
