/**
 * Keyword pool loading and prompt construction, mirroring the consumer's
 * pool.json schema: { task, classes: [{name, keywords}], templates } where
 * every template contains exactly one `{}` placeholder.
 */
import { readFileSync } from 'node:fs'

export interface KeywordPool {
  task: string
  classes: Array<{ name: string; keywords: string[] }>
  templates: string[]
}

/** Keywords flattened in class order, matching the consumer's table order. */
export function flatKeywords(pool: KeywordPool): string[] {
  return pool.classes.flatMap(c => c.keywords)
}

export function validatePool(pool: KeywordPool): void {
  const flat = flatKeywords(pool)
  if (flat.length === 0) throw new Error('keyword pool is empty')
  const seen = new Map<string, string>()
  for (const kw of flat) {
    const key = kw.trim().toLowerCase()
    const prev = seen.get(key)
    if (prev !== undefined) throw new Error(`duplicate keyword: '${kw}' vs '${prev}'`)
    seen.set(key, kw)
  }
  if (!pool.templates || pool.templates.length === 0) {
    throw new Error('pool must declare at least one template')
  }
  for (const t of pool.templates) {
    if (t.split('{}').length !== 2) {
      throw new Error(`template must have exactly one placeholder: '${t}'`)
    }
  }
}

export function loadPool(path: string): KeywordPool {
  let doc: unknown
  try {
    doc = JSON.parse(readFileSync(path, 'utf-8'))
  } catch (err) {
    throw new Error(`${path}: invalid pool file: ${(err as Error).message}`)
  }
  const d = doc as Record<string, unknown>
  if (typeof d.task !== 'string' || !Array.isArray(d.classes) || !Array.isArray(d.templates)) {
    throw new Error(`${path}: missing pool field (task/classes/templates)`)
  }
  const pool: KeywordPool = {
    task: d.task,
    classes: d.classes as KeywordPool['classes'],
    templates: d.templates as string[],
  }
  validatePool(pool)
  return pool
}

export function applyTemplate(template: string, keyword: string): string {
  return template.replace('{}', keyword)
}
