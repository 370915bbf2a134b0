import { defineConfig } from 'vite'

export default defineConfig({
  server: {
    proxy: {
      // dev server forwards API calls to a locally running `partseg serve`
      '/v1': 'http://127.0.0.1:8008',
    },
  },
  build: {
    outDir: 'dist',
  },
})
