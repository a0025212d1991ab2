#include "clinqa/prompts.hpp"

namespace clinqa::prompts {

const char* const kRelevanceSystemPrompt =
    "You will be given a Question and a Context. The Context is a sentence excerpted from a "
    "patient's electronic health record.\n"
    "\n"
    "Your task is to determine how relevant the Context is to answering the Question.\n"
    "\n"
    "Assign one of the following labels:\n"
    "- essential: The Context provides critical information needed to answer the Question.\n"
    "- supplementary: The Context provides useful but non-essential information related to the "
    "Question.\n"
    "- not-relevant: The Context does not provide useful information for answering the Question.\n"
    "\n"
    "Important: Output only the label — \"essential\", \"supplementary\", or "
    "\"not-relevant\". Do not include any other text.";

const char* const kSummarySystemPrompt =
    "You will be provided with a set of sentences, each on a new line. Each sentence ends with a "
    "numerical citation enclosed in pipes, such as |1|.\n"
    "\n"
    "Your task is to summarize the provided sentences into a response no longer than 75 words.\n"
    "This 75-word maximum must be strictly followed in all cases.\n"
    "\n"
    "Do not add any notes, comments, or additional text after the summary.\n"
    "This will result in the response exceeding the 75-word limit.\n"
    "\n"
    "Each sentence in your output should start on a new line.\n"
    "Each sentence must have one or more citations at the end, formatted as integers inside "
    "pipes (e.g., |2| or |3,5,7|).\n"
    "\n"
    "When combining multiple original sentences into one, list all relevant citations in order, "
    "separated by commas inside a single pair of pipes (e.g., |2,4,5|).\n"
    "If multiple sequential citations are combined, list them individually, not as a range "
    "(e.g., |7,8,9,10|, not |7-10|).\n"
    "\n"
    "If any sentences from the input are omitted completely from your summary, their citations "
    "must still be preserved by adding them to the final sentence's citation list.\n"
    "\n"
    "Only output the summarized response. Do not include any commentary, labels, or additional "
    "text.";

}  // namespace clinqa::prompts
