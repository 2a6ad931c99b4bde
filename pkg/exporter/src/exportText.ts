/**
 * Text export: embed every pool keyword as the L2-normalized mean over its
 * template prompts and write a text-embedding table JSON
 * ({ keywords, d_t, embeddings }) interchangeable with tables produced on
 * the consumer side.
 */
import { Encoder, l2Normalize } from './encoder.js'
import { KeywordPool, applyTemplate, flatKeywords } from './pool.js'
import { writeFileAtomic } from './vleb.js'

export interface TextTable {
  keywords: string[]
  d_t: number
  embeddings: number[][]
}

export function embedKeywords(pool: KeywordPool, encoder: Encoder): TextTable {
  const keywords = flatKeywords(pool)
  const embeddings: number[][] = []
  for (const kw of keywords) {
    const mean = new Float64Array(encoder.dim)
    for (const template of pool.templates) {
      const vec = encoder.encodeText(applyTemplate(template, kw))
      for (let i = 0; i < encoder.dim; i++) mean[i] += vec[i]
    }
    for (let i = 0; i < encoder.dim; i++) mean[i] /= pool.templates.length
    embeddings.push(Array.from(l2Normalize(mean)))
  }
  return { keywords, d_t: encoder.dim, embeddings }
}

export function exportText(pool: KeywordPool, encoder: Encoder, outPath: string): TextTable {
  const table = embedKeywords(pool, encoder)
  // stable key order, one line, trailing newline: matches the consumer's writer
  const doc = {
    d_t: table.d_t,
    embeddings: table.embeddings,
    keywords: table.keywords,
  }
  writeFileAtomic(outPath, JSON.stringify(doc) + '\n')
  return table
}
