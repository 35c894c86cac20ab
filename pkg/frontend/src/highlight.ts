/**
 * Split a paragraph into before/match/after around the keyword hit so
 * the view can render exactly one highlighted span.
 */

export interface HighlightParts {
  before: string;
  match: string;
  after: string;
}

/** Length-preserving lowercase fold, mirroring the extractor's rule. */
export function fold(text: string): string {
  let out = '';
  for (const ch of text) {
    const low = ch.toLowerCase();
    out += low.length === 1 ? low : ch;
  }
  return out;
}

export function splitHighlight(
  paragraph: string,
  keyword: string,
  charOffset: number,
): HighlightParts {
  const end = charOffset + keyword.length;
  if (
    charOffset >= 0 &&
    end <= paragraph.length &&
    fold(paragraph.slice(charOffset, end)) === fold(keyword)
  ) {
    return {
      before: paragraph.slice(0, charOffset),
      match: paragraph.slice(charOffset, end),
      after: paragraph.slice(end),
    };
  }
  // stale offset: fall back to the first case-insensitive occurrence
  const index = fold(paragraph).indexOf(fold(keyword));
  if (index >= 0) {
    return {
      before: paragraph.slice(0, index),
      match: paragraph.slice(index, index + keyword.length),
      after: paragraph.slice(index + keyword.length),
    };
  }
  return { before: paragraph, match: '', after: '' };
}
