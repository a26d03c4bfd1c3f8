#pragma once

#include <string>
#include <unordered_set>
#include <vector>

namespace qag {

// The fixed 127-entry English function-word list used when reducing answers
// to keyphrases. Returned in list order; see stopwords.cpp for the verbatim
// list.
const std::vector<std::string>& stopword_list();

const std::unordered_set<std::string>& stopword_set();

bool is_stopword(const std::string& token);

}  // namespace qag
