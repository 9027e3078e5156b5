// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "labes/corpus.hpp"
#include "labes/kb.hpp"

namespace labes {

// Source-format adapters. Each normalizes a public dataset release into the
// corpus/schema/db JSON formats used everywhere else. Normalization is
// field-level: lowercasing, whitespace tokenization, slot-name passthrough;
// no upstream cleaning scripts are reproduced.
struct AdaptedData {
  Schema schema;
  EntityDb db;
  DialogCorpus train, dev, test;
};

enum class DatasetKind { camrest, incar, multiwoz };

DatasetKind dataset_kind_from_name(const std::string& name);

// `source_dir` must contain the dataset's standard files:
//   camrest:  CamRest676_v2.json (or CamRest676.json), CamRestDB.json
//   incar:    kvret_train_public.json, kvret_dev_public.json,
//             kvret_test_public.json
//   multiwoz: data.json, valListFile.txt, testListFile.txt, plus optional
//             <domain>_db.json files
AdaptedData adapt_dataset(DatasetKind kind, const std::string& source_dir);

}  // namespace labes
